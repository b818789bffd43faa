import { AnalysisDoc, GenerateRequest, GenerateResponse, RenditionInfo } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

/** Thin typed client over the documented REST endpoints. */
export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(base = "", fetchFn: FetchLike = (...a) => fetch(...a)) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.base}${path}`, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = JSON.stringify(body.detail ?? body);
      } catch {
        // non-JSON error body; keep statusText
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async createProject(form: FormData): Promise<string> {
    const doc = await this.request<{ id: string }>("/projects", { method: "POST", body: form });
    return doc.id;
  }

  getAnalysis(projectId: string): Promise<AnalysisDoc> {
    return this.request(`/projects/${projectId}/analysis`);
  }

  generate(projectId: string, req: GenerateRequest): Promise<GenerateResponse> {
    return this.request(`/projects/${projectId}/generate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  async synthesize(projectId: string, renditionId: string): Promise<string> {
    const doc = await this.request<{ rendition_id: string }>(
      `/projects/${projectId}/synthesize`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ rendition_id: renditionId }),
      },
    );
    return doc.rendition_id;
  }

  async renditions(projectId: string): Promise<RenditionInfo[]> {
    const doc = await this.request<{ renditions: RenditionInfo[] }>(
      `/projects/${projectId}/renditions`,
    );
    return doc.renditions;
  }

  audioUrl(projectId: string, renditionId: string, lowpass: boolean): string {
    const query = lowpass ? "?lowpass=true" : "";
    return `${this.base}/projects/${projectId}/audio/${renditionId}${query}`;
  }
}
