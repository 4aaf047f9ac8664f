"""Open-surface extraction from unsigned distance grids.

Plain marching cubes needs signed corner values; an unsigned field has none.
Each near-surface cell gets local pseudo-signs instead: the lowest-valued
corner anchors the positive side and any in-band corner whose gradient
opposes it flips negative. The opposition test compares each corner against
the cell's consensus normal line (dominant eigenvector of the corner-gradient
covariance, oriented to keep the anchor positive) rather than the anchor's
raw gradient: the anchor sits closest to the surface, where finite-difference
gradients straddle the distance cusp and are the least reliable, and a noisy
anchor gradient poisons every comparison in the cell. Neighboring cells can
still disagree; the resulting seams are accepted and bounded by the chamfer
round-trip tests.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .fields import UdfGrid
from .mesh import TriMesh, triangle_areas

__all__ = ["MeshingConfig", "extract_mesh", "vertex_interpolate"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeshingConfig:
    """surface_band defaults to 2x grid spacing when left unset."""

    surface_band: float | None = None
    grad_opposition_threshold: float = 0.0
    min_corner_value: float = 1e-6

    def __post_init__(self):
        if self.surface_band is not None and self.surface_band <= 0:
            raise ValueError("surface_band must be positive")
        if not -1.0 <= self.grad_opposition_threshold <= 0.0:
            raise ValueError("grad_opposition_threshold must be in [-1, 0]")

    def band_for(self, grid: UdfGrid) -> float:
        return self.surface_band if self.surface_band is not None else 2.0 * grid.spacing


def vertex_interpolate(d_pos: float, d_neg: float) -> float:
    """Crossing fraction measured from the positive corner: d_pos / (d_pos + d_neg)."""
    if d_pos < 0 or d_neg < 0:
        raise ValueError("corner distances must be nonnegative")
    total = d_pos + d_neg
    if total < 1e-12:
        return 0.5
    return d_pos / total


def extract_mesh(grid: UdfGrid, cfg: MeshingConfig = MeshingConfig()) -> TriMesh:
    """Marching cubes over pseudo-signed corners; output may be non-watertight."""
    r = grid.resolution
    if r < 8:
        raise ValueError("grid resolution must be >= 8")
    band = cfg.band_for(grid)
    values = grid.array()  # (R, R, R) indexed [ix, iy, iz]

    # candidate cells: any corner below the band
    corner_vals = np.stack(
        [values[ox : ox + r - 1, oy : oy + r - 1, oz : oz + r - 1] for ox, oy, oz in CORNER_OFFSETS],
        axis=-1,
    )  # (R-1, R-1, R-1, 8)
    cand = np.argwhere(corner_vals.min(axis=-1) < band)
    if len(cand) == 0:
        log.warning("extract_mesh: no grid cell within band %.4g, returning empty mesh", band)
        return TriMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))

    grads = grid.node_gradients()  # (R, R, R, 3)
    cv = corner_vals[cand[:, 0], cand[:, 1], cand[:, 2]]  # (C, 8)
    cg = np.stack(
        [grads[cand[:, 0] + ox, cand[:, 1] + oy, cand[:, 2] + oz] for ox, oy, oz in CORNER_OFFSETS],
        axis=1,
    )  # (C, 8, 3)

    # pseudo-signs: anchor at the lowest-valued corner, flip in-band corners
    # whose gradient opposes the cell's consensus normal line
    covariance = np.einsum("cka,ckb->cab", cg, cg)
    _, eigvecs = np.linalg.eigh(covariance)
    normal = eigvecs[:, :, -1]  # (C, 3), dominant direction, sign arbitrary
    dots = np.einsum("cka,ca->ck", cg, normal)
    ref = np.argmin(cv, axis=1)
    anchor_dot = dots[np.arange(len(cv)), ref]
    dots[anchor_dot < 0] *= -1.0  # orient so the anchor is on the + side
    neg = (dots < cfg.grad_opposition_threshold) & (cv < band)
    neg[np.arange(len(cv)), ref] = False
    on_surface = cv < cfg.min_corner_value
    neg &= ~on_surface  # corners sitting on the surface stay positive

    case = (neg.astype(np.int64) << np.arange(8)).sum(axis=1)
    active = np.array(EDGE_TABLE, dtype=np.int64)[case] != 0
    cand, cv, case = cand[active], cv[active], case[active]

    spacing = grid.spacing
    verts: list[tuple[float, float, float]] = []
    vert_ids: dict[tuple[int, int, int, int], int] = {}
    tris: list[tuple[int, int, int]] = []

    edge_axis = [int(np.argmax(np.abs(np.subtract(CORNER_OFFSETS[b], CORNER_OFFSETS[a])))) for a, b in EDGE_CORNERS]
    edge_low = []  # lower-node corner id per edge, canonical placement end
    for (a, b), ax in zip(EDGE_CORNERS, edge_axis):
        edge_low.append(a if CORNER_OFFSETS[a][ax] <= CORNER_OFFSETS[b][ax] else b)

    for (cx, cy, cz), vals8, cs in zip(cand, cv, case):
        tri_edges = TRI_TABLE[cs]
        if not tri_edges:
            continue
        local: dict[int, int] = {}
        for e in set(tri_edges):
            lo = edge_low[e]
            a, b = EDGE_CORNERS[e]
            hi = b if lo == a else a
            ax = edge_axis[e]
            off = CORNER_OFFSETS[lo]
            key = (int(cx) + off[0], int(cy) + off[1], int(cz) + off[2], ax)
            vid = vert_ids.get(key)
            if vid is None:
                t = vertex_interpolate(float(vals8[lo]), float(vals8[hi]))
                pos = [
                    -1.0 + key[0] * spacing,
                    -1.0 + key[1] * spacing,
                    -1.0 + key[2] * spacing,
                ]
                pos[ax] += t * spacing
                vid = len(verts)
                verts.append((pos[0], pos[1], pos[2]))
                vert_ids[key] = vid
            local[e] = vid
        for k in range(0, len(tri_edges), 3):
            i, j, l = local[tri_edges[k]], local[tri_edges[k + 1]], local[tri_edges[k + 2]]
            if i != j and j != l and i != l:
                tris.append((i, j, l))

    if not tris:
        log.warning("extract_mesh: pseudo-signs produced no crossings, returning empty mesh")
        return TriMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))

    mesh = TriMesh(np.array(verts), np.array(tris, dtype=np.int64), name="extracted")
    areas = triangle_areas(mesh)
    keep = areas > 1e-14
    if not keep.all():
        mesh = _drop_triangles(mesh, keep)
    if not np.all(np.isfinite(mesh.vertices)):
        raise RuntimeError("extraction produced non-finite vertices")
    return mesh


def _drop_triangles(mesh: TriMesh, keep: np.ndarray) -> TriMesh:
    tris = mesh.triangles[keep]
    used = np.unique(tris)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[tris], name=mesh.name)
