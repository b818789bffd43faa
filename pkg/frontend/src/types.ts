// Wire types matching the pitchforge REST schemas.

export interface ContourDoc {
  hop_seconds: number;
  hz: number[];
  voiced: boolean[];
}

export interface GridDoc {
  mu: number;
  sigma: number;
  n_bins: number;
}

export interface IntervalDoc {
  start_frame: number;
  end_frame: number;
}

export interface AnalysisDoc {
  id: string;
  frame_count: number;
  hop_seconds: number;
  frames: ContourDoc;
  grid: GridDoc;
  words: ({ text: string } & IntervalDoc)[];
  phones: ({ sym: string } & IntervalDoc)[];
}

export interface ConstraintSegment {
  start_frame: number;
  end_frame: number; // exclusive
  hz: number[];
}

export interface GenerateRequest {
  constraints: ConstraintSegment[];
  keep_regions: IntervalDoc[];
  direction?: "forward" | "reverse";
  seed: number;
  temperature?: number;
}

export interface GenerateResponse {
  rendition_id: string;
  contour: ContourDoc;
}

export interface RenditionInfo {
  id: string;
  kind: string;
  has_audio: boolean;
}

/** log2-Hz width of one voiced quantizer bin. */
export function binWidthLog2(grid: GridDoc): number {
  return (8 * grid.sigma) / (grid.n_bins - 1);
}
