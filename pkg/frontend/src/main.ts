/**
 * App wiring for the sketch-to-garment workflow:
 * draw -> Save (generate) -> inspect -> Capture -> redraw -> Save (edit)
 * -> Reset / Save Model.
 */

import { ApiError, Client } from './api.js';
import { SketchPad } from './pad.js';
import { MutationQueue } from './queue.js';
import { ModelViewer } from './viewer.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const client = new Client('');
const pad = new SketchPad(el<HTMLCanvasElement>('pad'));
const viewer = new ModelViewer(el<HTMLCanvasElement>('viewer'));
const status = el<HTMLSpanElement>('status');
const queue = new MutationQueue();

let sessionId: string | null = null;
let captured = false; // after a capture, Save means edit

function setStatus(text: string, isError = false): void {
  status.textContent = text;
  status.classList.toggle('error', isError);
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.code === 'empty_sketch') return 'empty sketch: draw something first';
    if (err.status === 404) return 'session expired: press Save on a sketch to regenerate';
    return `${err.code}: ${err.message}`;
  }
  return String(err);
}

async function refreshModel(): Promise<void> {
  if (!sessionId) return;
  const text = await client.fetchModel(sessionId);
  const info = viewer.loadObjText(text);
  setStatus(`model: ${info.vertexCount} vertices, ${info.triangleCount} triangles`);
}

function save(): void {
  const png = pad.exportPng();
  void queue
    .enqueue(async () => {
      if (sessionId && captured) {
        setStatus('optimizing toward the edited sketch…');
        const out = await client.edit(sessionId, png);
        await refreshModel();
        setStatus(
          `edited: chamfer ${Math.round(out.chamfer_before)} -> ${Math.round(out.chamfer_after)}` +
            (out.diverged ? ' (diverged, kept best)' : ''),
        );
      } else {
        setStatus('generating…');
        const out = await client.generate(png);
        sessionId = out.session_id;
        captured = false;
        await refreshModel();
      }
    })
    .catch((err) => setStatus(describe(err), true));
}

function capture(): void {
  if (!sessionId) {
    setStatus('no session yet: draw a sketch and press Save', true);
    return;
  }
  const pose = viewer.orbit.capturePose();
  void queue
    .enqueue(async () => {
      setStatus(`capturing at azimuth ${pose.azimuth}°, elevation ${pose.elevation}°…`);
      const blob = await client.capture(sessionId!, pose.azimuth, pose.elevation);
      await pad.loadBlob(blob);
      captured = true;
      setStatus('capture loaded into the pad: edit it, then press Save');
    })
    .catch((err) => setStatus(describe(err), true));
}

function reset(): void {
  if (!sessionId) return;
  void queue
    .enqueue(async () => {
      await client.reset(sessionId!);
      captured = false;
      await refreshModel();
      setStatus('reset to the initial generation');
    })
    .catch((err) => setStatus(describe(err), true));
}

function saveModel(): void {
  if (!sessionId) return;
  void queue
    .enqueue(async () => {
      const text = await client.fetchModel(sessionId!);
      const blob = new Blob([text], { type: 'text/plain' });
      const a = document.createElement('a');
      a.href = URL.createObjectURL(blob);
      a.download = 'model.obj';
      a.click();
      URL.revokeObjectURL(a.href);
    })
    .catch((err) => setStatus(describe(err), true));
}

el<HTMLButtonElement>('tool-brush').addEventListener('click', () => {
  pad.tool = 'brush';
  setStatus('brush');
});
el<HTMLButtonElement>('tool-eraser').addEventListener('click', () => {
  pad.tool = 'eraser';
  setStatus('eraser');
});
el<HTMLButtonElement>('tool-clear').addEventListener('click', () => pad.clear());
el<HTMLButtonElement>('tool-undo').addEventListener('click', () => pad.undo());
el<HTMLButtonElement>('tool-save').addEventListener('click', save);
el<HTMLButtonElement>('view-capture').addEventListener('click', capture);
el<HTMLButtonElement>('view-reset').addEventListener('click', reset);
el<HTMLButtonElement>('view-export').addEventListener('click', saveModel);

viewer.start();
setStatus('draw a garment contour, then press Save');
