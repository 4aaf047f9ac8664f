"""Independent oracles used by the test suite.

These deliberately avoid the library's accelerated paths: brute-force scans and
closed forms only, so they can arbitrate correctness.
"""
from __future__ import annotations

import numpy as np


def closest_point_brute(vertices: np.ndarray, triangles: np.ndarray, q: np.ndarray) -> float:
    """Exhaustive min distance from one point to every triangle (scalar loop)."""
    best = np.inf
    for tri in triangles:
        a, b, c = vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]
        best = min(best, _point_triangle_distance(a, b, c, q))
    return best


def brute_distances(vertices: np.ndarray, triangles: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Exhaustive scan over every triangle per query, vectorized across triangles.

    Same region tests as the scalar version (which cross-checks it in the
    oracle self-test); no spatial acceleration of any kind.
    """
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    ab = b - a
    ac = c - a
    bc = c - b
    out = np.empty(len(queries))
    for k, q in enumerate(np.asarray(queries, dtype=np.float64)):
        ap = q - a
        bp = q - b
        cp = q - c
        d1 = (ab * ap).sum(1)
        d2 = (ac * ap).sum(1)
        d3 = (ab * bp).sum(1)
        d4 = (ac * bp).sum(1)
        d5 = (ab * cp).sum(1)
        d6 = (ac * cp).sum(1)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        denom = va + vb + vc
        denom = np.where(denom == 0, 1.0, denom)
        v = vb / denom
        w = vc / denom
        closest = a + ab * v[:, None] + ac * w[:, None]
        # overwrite in priority order: faces, then edges, then vertices
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / np.where(d1 - d3 == 0, 1.0, d1 - d3)
        closest = np.where(m[:, None], a + ab * np.clip(t, 0, 1)[:, None], closest)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / np.where(d2 - d6 == 0, 1.0, d2 - d6)
        closest = np.where(m[:, None], a + ac * np.clip(t, 0, 1)[:, None], closest)
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        den = (d4 - d3) + (d5 - d6)
        t = (d4 - d3) / np.where(den == 0, 1.0, den)
        closest = np.where(m[:, None], b + bc * np.clip(t, 0, 1)[:, None], closest)
        m = (d6 >= 0) & (d5 <= d6)
        closest = np.where(m[:, None], c, closest)
        m = (d3 >= 0) & (d4 <= d3)
        closest = np.where(m[:, None], b, closest)
        m = (d1 <= 0) & (d2 <= 0)
        closest = np.where(m[:, None], a, closest)
        out[k] = np.sqrt(((q - closest) ** 2).sum(1).min())
    return out


def _point_triangle_distance(a, b, c, p) -> float:
    """Closest distance from p to triangle abc via barycentric region tests."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + v * ab)))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + w * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + ab * v + ac * w)))


def chamfer_brute(a: np.ndarray, b: np.ndarray) -> float:
    """O(n^2) symmetric mean-of-squares chamfer between point clouds."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())
