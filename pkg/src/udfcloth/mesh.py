"""Triangle meshes: OBJ I/O, normalization, exact closest-point queries, surface sampling.

Meshes may be non-watertight (boundary edges are first-class); nothing here
ever repairs, closes, or re-meshes the input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

__all__ = [
    "TriMesh",
    "NormalizeTransform",
    "SurfaceIndex",
    "MeshLoadError",
    "EmptyMeshError",
    "DegenerateMeshError",
    "load_obj",
    "save_obj",
    "normalize_mesh",
    "sample_surface",
    "boundary_edges",
    "triangle_areas",
]


class MeshLoadError(ValueError):
    """Raised on malformed OBJ input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyMeshError(ValueError):
    """Raised when a mesh has no faces."""


class DegenerateMeshError(ValueError):
    """Raised when a mesh has zero spatial extent or zero total area."""


@dataclass
class TriMesh:
    """Indexed triangle soup. Boundary edges are permitted."""

    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64
    name: str = ""

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        self.triangles = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (m, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertex coordinates must be finite")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise ValueError("negative triangle index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(m, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]


@dataclass(frozen=True)
class NormalizeTransform:
    """Centering translation and uniform scale, invertible to 1e-12 relative."""

    center: np.ndarray  # (3,)
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


def load_obj(path) -> TriMesh:
    """Parse a Wavefront OBJ file (v/f records; vn/vt ignored).

    Polygonal faces are fan-triangulated. Unreferenced vertices are retained.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    name = ""
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshLoadError("vertex needs 3 coordinates", lineno)
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshLoadError("bad vertex coordinate", lineno) from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshLoadError("face needs at least 3 vertices", lineno)
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshLoadError(f"bad face index {tok!r}", lineno) from None
                    if i < 0:
                        i = len(vertices) + 1 + i  # relative reference
                    if i < 1 or i > len(vertices):
                        raise MeshLoadError(f"face index {i} out of range", lineno)
                    idx.append(i - 1)
                for k in range(1, len(idx) - 1):  # fan triangulation
                    faces.append([idx[0], idx[k], idx[k + 1]])
            elif tag in ("o", "g") and len(parts) > 1 and not name:
                name = parts[1]
            # vn / vt / usemtl etc. ignored
    if not faces:
        raise EmptyMeshError(f"{path}: no faces")
    return TriMesh(np.array(vertices), np.array(faces), name=name)


def obj_to_string(mesh: TriMesh) -> str:
    """OBJ text: vertices with 6 decimal digits, 1-based faces, no normals or UVs."""
    lines = []
    if mesh.name:
        lines.append(f"o {mesh.name}")
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    return "\n".join(lines) + "\n"


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(obj_to_string(mesh))


def normalize_mesh(mesh: TriMesh, target_scale: float = 0.8) -> tuple[TriMesh, NormalizeTransform]:
    """Center on the bounding-box center and scale so max |coordinate| == target_scale."""
    if not 0.0 < target_scale <= 1.0:
        raise ValueError("target_scale must be in (0, 1]")
    if mesh.n_triangles == 0:
        raise EmptyMeshError("cannot normalize empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = (lo + hi) / 2.0
    extent = np.abs(mesh.vertices - center).max()
    if extent <= 0.0:
        raise DegenerateMeshError("mesh has zero extent")
    scale = target_scale / extent
    xform = NormalizeTransform(center=center, scale=scale)
    out = TriMesh(xform.apply(mesh.vertices), mesh.triangles.copy(), name=mesh.name)
    return out, xform


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    c = mesh.corners()
    cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def boundary_edges(mesh: TriMesh) -> np.ndarray:
    """Edges used by exactly one triangle, as (k, 2) sorted vertex pairs."""
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts == 1]


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n points uniformly by area from the mesh surface. Deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateMeshError("mesh has zero total area")
    cum = np.cumsum(areas)
    tri_idx = np.searchsorted(cum, rng.random(n) * total, side="right")
    tri_idx = np.minimum(tri_idx, len(areas) - 1)
    c = mesh.corners()[tri_idx]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    g = r1 * r2
    return a[:, None] * c[:, 0] + b[:, None] * c[:, 1] + g[:, None] * c[:, 2]


# ---------------------------------------------------------------------------
# Closest-point acceleration: BVH over triangles with exact per-triangle tests.
# ---------------------------------------------------------------------------

_LEAF_SIZE = 4


def _build_bvh(corners: np.ndarray):
    """Median-split BVH; returns flat arrays consumable by the numba kernels."""
    t = len(corners)
    tri_min = corners.min(axis=1)
    tri_max = corners.max(axis=1)
    centroids = corners.mean(axis=1)

    order = np.arange(t, dtype=np.int64)
    node_min: list[np.ndarray] = []
    node_max: list[np.ndarray] = []
    node_left: list[int] = []
    node_right: list[int] = []
    node_start: list[int] = []
    node_count: list[int] = []

    def new_node(start: int, count: int) -> int:
        idx = order[start : start + count]
        node_min.append(tri_min[idx].min(axis=0))
        node_max.append(tri_max[idx].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(start)
        node_count.append(count)
        return len(node_min) - 1

    # iterative split to avoid recursion limits on striped meshes
    root = new_node(0, t)
    stack = [root]
    while stack:
        ni = stack.pop()
        start, count = node_start[ni], node_count[ni]
        if count <= _LEAF_SIZE:
            continue
        idx = order[start : start + count]
        cent = centroids[idx]
        axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
        local = np.argsort(cent[:, axis], kind="stable")
        order[start : start + count] = idx[local]
        half = count // 2
        li = new_node(start, half)
        ri = new_node(start + half, count - half)
        node_left[ni] = li
        node_right[ni] = ri
        node_count[ni] = 0  # interior
        stack.extend((li, ri))

    return (
        np.array(node_min),
        np.array(node_max),
        np.array(node_left, dtype=np.int64),
        np.array(node_right, dtype=np.int64),
        np.array(node_start, dtype=np.int64),
        np.array(node_count, dtype=np.int64),
        order,
    )


@njit(cache=True, fastmath=False)
def _closest_on_tri(tri, qx, qy, qz):
    """Exact closest point on one triangle (Ericson's region tests).

    tri is a flat (9,) row: ax ay az bx by bz cx cy cz.
    Returns (d2, px, py, pz).
    """
    ax, ay, az = tri[0], tri[1], tri[2]
    bx, by, bz = tri[3], tri[4], tri[5]
    cx, cy, cz = tri[6], tri[7], tri[8]

    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = qx - ax, qy - ay, qz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2_ = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2_ <= 0.0:
        px, py, pz = ax, ay, az
    else:
        bpx, bpy, bpz = qx - bx, qy - by, qz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        if d3 >= 0.0 and d4 <= d3:
            px, py, pz = bx, by, bz
        else:
            vc = d1 * d4 - d3 * d2_
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                px, py, pz = ax + v * abx, ay + v * aby, az + v * abz
            else:
                cpx, cpy, cpz = qx - cx, qy - cy, qz - cz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                if d6 >= 0.0 and d5 <= d6:
                    px, py, pz = cx, cy, cz
                else:
                    vb = d5 * d2_ - d1 * d6
                    if vb <= 0.0 and d2_ >= 0.0 and d6 <= 0.0:
                        w = d2_ / (d2_ - d6)
                        px, py, pz = ax + w * acx, ay + w * acy, az + w * acz
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            px = bx + w * (cx - bx)
                            py = by + w * (cy - by)
                            pz = bz + w * (cz - bz)
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            px = ax + abx * v + acx * w
                            py = ay + aby * v + acy * w
                            pz = az + abz * v + acz * w
    dx, dy, dz = qx - px, qy - py, qz - pz
    return dx * dx + dy * dy + dz * dz, px, py, pz


@njit(cache=True)
def _aabb_dist2(mn, mx, qx, qy, qz):
    d = 0.0
    if qx < mn[0]:
        d += (mn[0] - qx) ** 2
    elif qx > mx[0]:
        d += (qx - mx[0]) ** 2
    if qy < mn[1]:
        d += (mn[1] - qy) ** 2
    elif qy > mx[1]:
        d += (qy - mx[1]) ** 2
    if qz < mn[2]:
        d += (mn[2] - qz) ** 2
    elif qz > mx[2]:
        d += (qz - mx[2]) ** 2
    return d


@njit(cache=True)
def _bvh_closest(nmin, nmax, nleft, nright, nstart, ncount, order, tris, qx, qy, qz):
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    best = np.inf
    bx = by = bz = 0.0
    btri = -1
    while top > 0:
        top -= 1
        ni = stack[top]
        if _aabb_dist2(nmin[ni], nmax[ni], qx, qy, qz) >= best:
            continue
        if ncount[ni] > 0:  # leaf
            for k in range(nstart[ni], nstart[ni] + ncount[ni]):
                ti = order[k]
                d2, px, py, pz = _closest_on_tri(tris[ti], qx, qy, qz)
                if d2 < best:
                    best = d2
                    bx, by, bz = px, py, pz
                    btri = ti
        else:
            li = nleft[ni]
            ri = nright[ni]
            dl = _aabb_dist2(nmin[li], nmax[li], qx, qy, qz)
            dr = _aabb_dist2(nmin[ri], nmax[ri], qx, qy, qz)
            # push farther child first so the nearer one is visited next
            if dl <= dr:
                if dr < best:
                    stack[top] = ri
                    top += 1
                if dl < best:
                    stack[top] = li
                    top += 1
            else:
                if dl < best:
                    stack[top] = li
                    top += 1
                if dr < best:
                    stack[top] = ri
                    top += 1
    return best, bx, by, bz, btri


@njit(cache=True, parallel=True)
def _bvh_closest_batch(nmin, nmax, nleft, nright, nstart, ncount, order, tris, queries, out_d, out_p, out_t):
    for i in prange(queries.shape[0]):
        d2, px, py, pz, ti = _bvh_closest(
            nmin, nmax, nleft, nright, nstart, ncount, order, tris, queries[i, 0], queries[i, 1], queries[i, 2]
        )
        out_d[i] = math.sqrt(d2)
        out_p[i, 0] = px
        out_p[i, 1] = py
        out_p[i, 2] = pz
        out_t[i] = ti


@dataclass
class SurfaceIndex:
    """Immutable closest-point index over a mesh; safe for concurrent queries."""

    mesh: TriMesh
    _nmin: np.ndarray = field(repr=False, default=None)
    _nmax: np.ndarray = field(repr=False, default=None)
    _nleft: np.ndarray = field(repr=False, default=None)
    _nright: np.ndarray = field(repr=False, default=None)
    _nstart: np.ndarray = field(repr=False, default=None)
    _ncount: np.ndarray = field(repr=False, default=None)
    _order: np.ndarray = field(repr=False, default=None)
    _tris_flat: np.ndarray = field(repr=False, default=None)
    cumulative_area: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.mesh.n_triangles == 0:
            raise EmptyMeshError("cannot index empty mesh")
        corners = self.mesh.corners()
        (self._nmin, self._nmax, self._nleft, self._nright, self._nstart, self._ncount, self._order) = _build_bvh(
            corners
        )
        self._tris_flat = np.ascontiguousarray(corners.reshape(len(corners), 9))
        self.cumulative_area = np.cumsum(triangle_areas(self.mesh))

    def closest_point(self, p) -> tuple[float, np.ndarray, int]:
        """Exact distance, closest surface point, and owning triangle index."""
        p = np.asarray(p, dtype=np.float64)
        d2, px, py, pz, ti = _bvh_closest(
            self._nmin,
            self._nmax,
            self._nleft,
            self._nright,
            self._nstart,
            self._ncount,
            self._order,
            self._tris_flat,
            float(p[0]),
            float(p[1]),
            float(p[2]),
        )
        return math.sqrt(d2), np.array([px, py, pz]), int(ti)

    def distances(self, points: np.ndarray) -> np.ndarray:
        """Exact unsigned distances for a batch of query points."""
        d, _, _ = self.closest_points(points)
        return d

    def closest_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        n = len(points)
        out_d = np.empty(n)
        out_p = np.empty((n, 3))
        out_t = np.empty(n, dtype=np.int64)
        _bvh_closest_batch(
            self._nmin,
            self._nmax,
            self._nleft,
            self._nright,
            self._nstart,
            self._ncount,
            self._order,
            self._tris_flat,
            points,
            out_d,
            out_p,
            out_t,
        )
        return out_d, out_p, out_t


def closest_surface_point(index: SurfaceIndex, p) -> tuple[float, np.ndarray, int]:
    """Functional alias for SurfaceIndex.closest_point."""
    return index.closest_point(p)
