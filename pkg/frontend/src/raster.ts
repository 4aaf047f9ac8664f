/**
 * Binary sketch raster: the single source of truth for the pad.
 *
 * Values are 0 (ink) or 255 (background) — the backend contract is strictly
 * binary, so strokes are stamped directly into this buffer and the canvas is
 * only ever a display of it. No anti-aliased gray can leak into an export.
 */

export const INK = 0;
export const BACKGROUND = 255;

export type Tool = 'brush' | 'eraser';

export class BinaryRaster {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;
  private undoStack: Uint8Array[] = [];
  private readonly undoLimit: number;

  constructor(width: number, height: number, undoLimit = 20) {
    this.width = width;
    this.height = height;
    this.undoLimit = undoLimit;
    this.data = new Uint8Array(width * height).fill(BACKGROUND);
  }

  clone(): Uint8Array {
    return this.data.slice();
  }

  load(data: Uint8Array): void {
    if (data.length !== this.data.length) throw new Error('raster size mismatch');
    this.data.set(data);
  }

  inkCount(): number {
    let n = 0;
    for (const v of this.data) if (v === INK) n++;
    return n;
  }

  /** Snapshot current pixels; call at stroke start so undo restores exactly. */
  pushUndo(): void {
    this.undoStack.push(this.clone());
    if (this.undoStack.length > this.undoLimit) this.undoStack.shift();
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.data.set(prev);
    return true;
  }

  clear(): void {
    this.pushUndo();
    this.data.fill(BACKGROUND);
  }

  /** Stamp a hard-edged disc. */
  stamp(cx: number, cy: number, radius: number, tool: Tool): void {
    const value = tool === 'brush' ? INK : BACKGROUND;
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.data[y * this.width + x] = value;
      }
    }
  }

  /** Stamp along a segment so fast pointer moves leave no gaps. */
  stroke(x0: number, y0: number, x1: number, y1: number, radius: number, tool: Tool): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius * 0.5)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stamp(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, tool);
    }
  }

  /** Binarized copy of arbitrary grayscale data (used when loading captures). */
  static fromGray(width: number, height: number, gray: Uint8Array, threshold = 128): BinaryRaster {
    const r = new BinaryRaster(width, height);
    for (let i = 0; i < gray.length; i++) r.data[i] = gray[i] < threshold ? INK : BACKGROUND;
    return r;
  }
}
