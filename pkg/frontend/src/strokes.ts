import { ConstraintSegment } from "./types.js";
import { ViewTransform } from "./view.js";

export interface PointerSample {
  x: number;
  y: number;
}

export interface StrokeResult {
  segments: ConstraintSegment[];
  notice?: string;
}

/**
 * Convert a pointer trail into per-frame constraint segments.
 *
 * Pixels map to frames through the view; frequencies interpolate linearly in
 * log space across the stroke span. Frames the analysis marks unvoiced are
 * dropped (voicing is not editable), which may split the stroke into several
 * contiguous segments.
 */
export function strokeToConstraint(
  samples: PointerSample[],
  view: ViewTransform,
  voiced: boolean[],
): StrokeResult {
  // vertical overshoot clamps to the grid edge; horizontal overshoot is out
  const inside = samples
    .filter((s) => s.x >= 0 && s.x < view.width)
    .map((s) => ({ x: s.x, y: Math.min(Math.max(s.y, 0), view.height) }));
  if (inside.length === 0) {
    return { segments: [], notice: "stroke is outside the canvas" };
  }

  const byFrame = new Map<number, number[]>();
  for (const s of inside) {
    const frame = view.xToFrame(s.x);
    const log2 = Math.log2(view.yToHz(s.y));
    const bucket = byFrame.get(frame);
    if (bucket) bucket.push(log2);
    else byFrame.set(frame, [log2]);
  }

  const touched = [...byFrame.keys()].sort((a, b) => a - b);
  const first = touched[0];
  const last = touched[touched.length - 1];

  // average multiple samples per frame, interpolate skipped frames
  const anchors = touched.map((f) => ({
    frame: f,
    log2: byFrame.get(f)!.reduce((a, b) => a + b, 0) / byFrame.get(f)!.length,
  }));
  const log2At = (frame: number): number => {
    if (frame <= anchors[0].frame) return anchors[0].log2;
    for (let i = 1; i < anchors.length; i++) {
      if (frame <= anchors[i].frame) {
        const a = anchors[i - 1];
        const b = anchors[i];
        const t = (frame - a.frame) / (b.frame - a.frame);
        return a.log2 + t * (b.log2 - a.log2);
      }
    }
    return anchors[anchors.length - 1].log2;
  };

  const segments: ConstraintSegment[] = [];
  let current: ConstraintSegment | null = null;
  for (let frame = first; frame <= last; frame++) {
    if (!voiced[frame]) {
      current = null;
      continue;
    }
    const hz = Math.pow(2, log2At(frame));
    if (current && current.end_frame === frame) {
      current.hz.push(hz);
      current.end_frame = frame + 1;
    } else {
      current = { start_frame: frame, end_frame: frame + 1, hz: [hz] };
      segments.push(current);
    }
  }
  if (segments.length === 0) {
    return { segments, notice: "stroke covers only unvoiced frames" };
  }
  return { segments };
}
