import { ConstraintSegment, ContourDoc, IntervalDoc } from "./types.js";
import { ViewTransform } from "./view.js";

const COLORS = {
  background: "#11151c",
  gridline: "#2a3140",
  analysis: "#5c6b84",
  working: "#7ad0ff",
  stroke: "#ffb454",
  lock: "rgba(120, 220, 140, 0.18)",
  lockEdge: "#78dc8c",
};

export function drawEditor(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  analysis: ContourDoc,
  working: ContourDoc,
  strokes: ConstraintSegment[],
  locks: IntervalDoc[],
): void {
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, view.width, view.height);

  ctx.strokeStyle = COLORS.gridline;
  ctx.lineWidth = 1;
  for (const hz of [100, 150, 200, 300, 400]) {
    const y = view.hzToY(hz);
    if (y < 0 || y > view.height) continue;
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(view.width, y);
    ctx.stroke();
    ctx.fillStyle = COLORS.gridline;
    ctx.fillText(`${hz} Hz`, 4, y - 3);
  }

  for (const lock of locks) {
    const x0 = view.frameToX(lock.start_frame - 0.5);
    const x1 = view.frameToX(lock.end_frame - 0.5);
    ctx.fillStyle = COLORS.lock;
    ctx.fillRect(x0, 0, x1 - x0, view.height);
    ctx.strokeStyle = COLORS.lockEdge;
    ctx.strokeRect(x0, 0, x1 - x0, view.height);
  }

  drawContour(ctx, view, analysis, COLORS.analysis, 1);
  drawContour(ctx, view, working, COLORS.working, 2);

  ctx.strokeStyle = COLORS.stroke;
  ctx.lineWidth = 2;
  for (const seg of strokes) {
    ctx.beginPath();
    for (let i = 0; i < seg.hz.length; i++) {
      const x = view.frameToX(seg.start_frame + i);
      const y = view.hzToY(seg.hz[i]);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}

function drawContour(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  contour: ContourDoc,
  color: string,
  width: number,
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  let open = false;
  ctx.beginPath();
  for (let f = 0; f < contour.hz.length; f++) {
    if (!contour.voiced[f]) {
      open = false;
      continue;
    }
    const x = view.frameToX(f);
    const y = view.hzToY(contour.hz[f]);
    if (open) ctx.lineTo(x, y);
    else ctx.moveTo(x, y);
    open = true;
  }
  ctx.stroke();
}
