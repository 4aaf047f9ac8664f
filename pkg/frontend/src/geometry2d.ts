/** 2D helpers for the capture-overlay check: ink pixels vs projected mesh edges. */

import { projectPoint } from './camera.js';
import type { ParsedMesh } from './objparse.js';
import { meshEdges } from './objparse.js';

export function pointSegmentDistance(
  px: number,
  py: number,
  ax: number,
  ay: number,
  bx: number,
  by: number,
): number {
  const dx = bx - ax;
  const dy = by - ay;
  const len2 = dx * dx + dy * dy;
  let t = 0;
  if (len2 > 0) t = Math.max(0, Math.min(1, ((px - ax) * dx + (py - ay) * dy) / len2));
  const cx = ax + t * dx;
  const cy = ay + t * dy;
  return Math.hypot(px - cx, py - cy);
}

/**
 * For each query pixel, the distance to the nearest projected mesh edge.
 * A capture's ink derives from a depth render of these very triangles, so on
 * a matching camera the distances stay within rasterization error.
 */
export function distancesToProjectedEdges(
  queries: Array<[number, number]>,
  mesh: ParsedMesh,
  azimuthDeg: number,
  elevationDeg: number,
  width: number,
  height: number,
): Float64Array {
  const nVerts = mesh.positions.length / 3;
  const proj = new Float64Array(nVerts * 2);
  for (let i = 0; i < nVerts; i++) {
    const [x, y] = projectPoint(
      [mesh.positions[i * 3], mesh.positions[i * 3 + 1], mesh.positions[i * 3 + 2]],
      azimuthDeg,
      elevationDeg,
      width,
      height,
    );
    proj[i * 2] = x;
    proj[i * 2 + 1] = y;
  }
  const edges = meshEdges(mesh);
  const out = new Float64Array(queries.length).fill(Infinity);
  for (let q = 0; q < queries.length; q++) {
    const [px, py] = queries[q];
    let best = Infinity;
    for (let e = 0; e < edges.length; e += 2) {
      const a = edges[e] * 2;
      const b = edges[e + 1] * 2;
      // cheap reject: both endpoints farther than the current best + edge extent
      const d = pointSegmentDistance(px, py, proj[a], proj[a + 1], proj[b], proj[b + 1]);
      if (d < best) best = d;
      if (best === 0) break;
    }
    out[q] = best;
  }
  return out;
}
