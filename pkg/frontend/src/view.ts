import { GridDoc } from "./types.js";

/**
 * Invertible mapping between canvas pixels and (frame, hz) coordinates.
 *
 * The vertical axis is logarithmic in frequency and spans exactly the
 * project's quantization band, so a straight drawn line is straight in the
 * model's bin space.
 */
export class ViewTransform {
  readonly width: number;
  readonly height: number;
  readonly frameCount: number;
  readonly log2Lo: number;
  readonly log2Hi: number;

  constructor(width: number, height: number, frameCount: number, grid: GridDoc) {
    if (width <= 0 || height <= 0 || frameCount <= 0) {
      throw new Error(`degenerate view ${width}x${height} over ${frameCount} frames`);
    }
    this.width = width;
    this.height = height;
    this.frameCount = frameCount;
    this.log2Lo = grid.mu - 4 * grid.sigma;
    this.log2Hi = grid.mu + 4 * grid.sigma;
  }

  frameToX(frame: number): number {
    return ((frame + 0.5) / this.frameCount) * this.width;
  }

  xToFrame(x: number): number {
    const frame = Math.floor((x / this.width) * this.frameCount);
    return Math.min(Math.max(frame, 0), this.frameCount - 1);
  }

  hzToY(hz: number): number {
    const t = (Math.log2(hz) - this.log2Lo) / (this.log2Hi - this.log2Lo);
    return (1 - t) * this.height;
  }

  yToHz(y: number): number {
    const t = 1 - y / this.height;
    return Math.pow(2, this.log2Lo + t * (this.log2Hi - this.log2Lo));
  }

  /** Frequency span covered by one vertical pixel at a given height. */
  hzPerPixel(y: number): number {
    return Math.abs(this.yToHz(y - 0.5) - this.yToHz(y + 0.5));
  }

  /** log2-Hz span of one vertical pixel (constant on the log axis). */
  log2PerPixel(): number {
    return (this.log2Hi - this.log2Lo) / this.height;
  }
}
