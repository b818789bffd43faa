import { ApiClient } from "./api.js";
import {
  AnalysisDoc,
  ConstraintSegment,
  ContourDoc,
  GenerateRequest,
  IntervalDoc,
  binWidthLog2,
} from "./types.js";

export interface HistoryEntry {
  renditionId: string;
  contour: ContourDoc;
  audioRenditionId?: string;
}

/**
 * Client-side editing state: the working contour, constraint strokes, locked
 * regions and the rendition history. All mutations clip to the project's
 * frame range; the server remains the source of truth for every contour.
 */
export class EditorState {
  readonly projectId: string;
  readonly analysis: AnalysisDoc;
  working: ContourDoc;
  strokes: ConstraintSegment[] = [];
  locks: IntervalDoc[] = [];
  history: HistoryEntry[] = [];
  activeIndex = -1;
  pinnedSeed: number | null = null;

  private api: ApiClient;
  private requestToken = 0;
  private seedCounter = 0;

  constructor(api: ApiClient, projectId: string, analysis: AnalysisDoc) {
    this.api = api;
    this.projectId = projectId;
    this.analysis = analysis;
    this.working = {
      hop_seconds: analysis.frames.hop_seconds,
      hz: [...analysis.frames.hz],
      voiced: [...analysis.frames.voiced],
    };
  }

  get frameCount(): number {
    return this.analysis.frame_count;
  }

  addStrokeSegments(segments: ConstraintSegment[]): void {
    for (const seg of segments) {
      const start = Math.max(0, seg.start_frame);
      const end = Math.min(this.frameCount, seg.end_frame);
      if (end <= start) continue;
      this.strokes.push({
        start_frame: start,
        end_frame: end,
        hz: seg.hz.slice(start - seg.start_frame, end - seg.start_frame),
      });
    }
  }

  addLock(startFrame: number, endFrame: number): void {
    const start = Math.max(0, Math.min(startFrame, endFrame));
    const end = Math.min(this.frameCount, Math.max(startFrame, endFrame));
    if (end > start) this.locks.push({ start_frame: start, end_frame: end });
  }

  clearStrokes(): void {
    this.strokes = [];
  }

  clearLocks(): void {
    this.locks = [];
  }

  nextSeed(): number {
    if (this.pinnedSeed !== null) return this.pinnedSeed;
    this.seedCounter += 1;
    return this.seedCounter;
  }

  buildRequest(seed: number): GenerateRequest {
    return {
      constraints: this.strokes.map((s) => ({ ...s, hz: [...s.hz] })),
      keep_regions: this.locks.map((l) => ({ ...l })),
      seed,
      temperature: 1.0,
    };
  }

  /**
   * Regenerate unconstrained regions. Resolves to the new working contour,
   * or null when a newer regenerate superseded this one. Locked frames are
   * verified to stay within one quantization bin of their previous values.
   */
  async regenerate(seed = this.nextSeed()): Promise<ContourDoc | null> {
    const token = ++this.requestToken;
    const before = this.working;
    const response = await this.api.generate(this.projectId, this.buildRequest(seed));
    if (token !== this.requestToken) {
      return null; // superseded while in flight
    }
    const contour = response.contour;
    this.assertLocksHeld(before, contour);
    this.working = contour;
    this.history.push({ renditionId: response.rendition_id, contour });
    this.activeIndex = this.history.length - 1;
    return contour;
  }

  private assertLocksHeld(before: ContourDoc, after: ContourDoc): void {
    const tolerance = binWidthLog2(this.analysis.grid) + 1e-9;
    for (const lock of this.locks) {
      for (let f = lock.start_frame; f < lock.end_frame; f++) {
        if (!before.voiced[f]) continue;
        const drift = Math.abs(Math.log2(after.hz[f]) - Math.log2(before.hz[f]));
        if (drift > tolerance) {
          throw new Error(
            `locked frame ${f} drifted ${drift.toFixed(4)} log2-Hz (> ${tolerance.toFixed(4)})`,
          );
        }
      }
    }
  }

  async synthesizeActive(): Promise<string> {
    if (this.activeIndex < 0) throw new Error("nothing generated yet");
    const entry = this.history[this.activeIndex];
    entry.audioRenditionId = await this.api.synthesize(this.projectId, entry.renditionId);
    return entry.audioRenditionId;
  }
}
