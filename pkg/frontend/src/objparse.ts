/** Tiny OBJ reader: v/f records only, which is all the service emits. */

export interface ParsedMesh {
  positions: Float32Array; // xyz triples
  indices: Uint32Array; // triangle list
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const indices: number[] = [];
  for (const raw of text.split('\n')) {
    const line = raw.trim();
    if (!line || line.startsWith('#')) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === 'v') {
      if (parts.length < 4) throw new Error(`bad vertex line: ${line}`);
      positions.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (parts[0] === 'f') {
      const ids = parts.slice(1).map((tok) => {
        const head = Number(tok.split('/')[0]);
        if (!Number.isFinite(head) || head === 0) throw new Error(`bad face index: ${tok}`);
        return head > 0 ? head - 1 : positions.length / 3 + head;
      });
      for (let k = 1; k < ids.length - 1; k++) indices.push(ids[0], ids[k], ids[k + 1]);
    }
  }
  if (indices.length === 0) throw new Error('OBJ contains no faces');
  const maxIndex = Math.max(...indices);
  if (maxIndex >= positions.length / 3) throw new Error('face index out of range');
  return { positions: new Float32Array(positions), indices: new Uint32Array(indices) };
}

/** Unique undirected edges of a triangle list (for wireframe-style overlays). */
export function meshEdges(mesh: ParsedMesh): Uint32Array {
  const seen = new Set<number>();
  const out: number[] = [];
  const n = mesh.positions.length / 3;
  for (let t = 0; t < mesh.indices.length; t += 3) {
    const tri = [mesh.indices[t], mesh.indices[t + 1], mesh.indices[t + 2]];
    for (let k = 0; k < 3; k++) {
      const a = tri[k];
      const b = tri[(k + 1) % 3];
      const key = Math.min(a, b) * n + Math.max(a, b);
      if (!seen.has(key)) {
        seen.add(key);
        out.push(a, b);
      }
    }
  }
  return new Uint32Array(out);
}
