/** Sketch pad: pointer events drive the binary raster; the canvas just displays it. */

import { encodeGrayPng } from './png.js';
import { BACKGROUND, BinaryRaster, INK, type Tool } from './raster.js';

export class SketchPad {
  readonly raster: BinaryRaster;
  tool: Tool = 'brush';
  brushRadius = 3;
  onStroke: (() => void) | null = null;

  private readonly ctx: CanvasRenderingContext2D;
  private drawing = false;
  private lastX = 0;
  private lastY = 0;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    width = 256,
    height = 256,
  ) {
    this.raster = new BinaryRaster(width, height);
    canvas.width = width;
    canvas.height = height;
    const ctx = canvas.getContext('2d');
    if (!ctx) throw new Error('2D canvas context unavailable');
    this.ctx = ctx;
    canvas.addEventListener('pointerdown', (ev) => this.begin(ev));
    canvas.addEventListener('pointermove', (ev) => this.move(ev));
    window.addEventListener('pointerup', () => this.end());
    this.redraw();
  }

  private toRaster(ev: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [
      ((ev.clientX - rect.left) / rect.width) * this.raster.width,
      ((ev.clientY - rect.top) / rect.height) * this.raster.height,
    ];
  }

  private begin(ev: PointerEvent): void {
    this.raster.pushUndo();
    this.drawing = true;
    const [x, y] = this.toRaster(ev);
    this.lastX = x;
    this.lastY = y;
    this.raster.stamp(x, y, this.brushRadius, this.tool);
    this.redraw();
    ev.preventDefault();
  }

  private move(ev: PointerEvent): void {
    if (!this.drawing) return;
    const [x, y] = this.toRaster(ev);
    this.raster.stroke(this.lastX, this.lastY, x, y, this.brushRadius, this.tool);
    this.lastX = x;
    this.lastY = y;
    this.redraw();
  }

  private end(): void {
    if (this.drawing) {
      this.drawing = false;
      this.onStroke?.();
    }
  }

  redraw(): void {
    const img = this.ctx.createImageData(this.raster.width, this.raster.height);
    for (let i = 0; i < this.raster.data.length; i++) {
      const v = this.raster.data[i];
      img.data[i * 4] = v;
      img.data[i * 4 + 1] = v;
      img.data[i * 4 + 2] = v;
      img.data[i * 4 + 3] = 255;
    }
    this.ctx.putImageData(img, 0, 0);
  }

  clear(): void {
    this.raster.clear();
    this.redraw();
  }

  undo(): void {
    if (this.raster.undo()) this.redraw();
  }

  /** Deterministic binary PNG straight from the raster (no canvas re-encode). */
  exportPng(): Uint8Array {
    return encodeGrayPng(this.raster.width, this.raster.height, this.raster.data);
  }

  /** Load a server capture (or any grayscale image) into the pad, binarized. */
  async loadBlob(blob: Blob): Promise<void> {
    const bitmap = await createImageBitmap(blob);
    const off = document.createElement('canvas');
    off.width = this.raster.width;
    off.height = this.raster.height;
    const octx = off.getContext('2d');
    if (!octx) throw new Error('2D canvas context unavailable');
    octx.drawImage(bitmap, 0, 0, off.width, off.height);
    const img = octx.getImageData(0, 0, off.width, off.height);
    for (let i = 0; i < this.raster.data.length; i++) {
      this.raster.data[i] = img.data[i * 4] < 128 ? INK : BACKGROUND;
    }
    this.redraw();
  }
}
