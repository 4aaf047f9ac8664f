"""Queryable unsigned distance fields: trilinear grids, analytic closed forms,
gradient estimation, surface projection, and dense point-cloud extraction.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .mesh import SurfaceIndex
from .sampling import EvalGrid

__all__ = [
    "FieldQuery",
    "UdfGrid",
    "SphereField",
    "PlaneField",
    "CylinderField",
    "UnionField",
    "MeshField",
    "grid_from_field",
    "grid_from_mesh",
    "field_gradient",
    "project_point",
    "project_points",
    "densify_point_cloud",
    "save_grid",
    "load_grid",
]

log = logging.getLogger(__name__)

_UDFG_MAGIC = b"UDFG"
_UDFG_VERSION = 1

# points closer than this are treated as already on the surface and are not
# moved by gradient steps (the field is non-differentiable at its zero set)
SURFACE_EPS = 1e-4


@runtime_checkable
class FieldQuery(Protocol):
    """Nonnegative scalar field with gradients; batch variants take (n, 3) arrays."""

    def value(self, p) -> float: ...

    def values(self, points: np.ndarray) -> np.ndarray: ...

    def gradient(self, p) -> np.ndarray: ...

    def gradients(self, points: np.ndarray) -> np.ndarray: ...


class _BatchFromScalar:
    """Mixin deriving batch queries from the scalar ones."""

    def values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.array([self.value(p) for p in points])

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.stack([self.gradient(p) for p in points])


@dataclass
class UdfGrid:
    """Distance samples on an EvalGrid, trilinearly interpolated off-node."""

    resolution: int
    values_flat: np.ndarray  # (R^3,) in EvalGrid order (x fastest)

    def __post_init__(self):
        self.values_flat = np.asarray(self.values_flat, dtype=np.float64).reshape(-1)
        r = self.resolution
        if len(self.values_flat) != r**3:
            raise ValueError("value count does not match resolution^3")
        if not np.all(np.isfinite(self.values_flat)):
            raise ValueError("grid values must be finite")
        if self.values_flat.min() < 0:
            raise ValueError("grid values must be nonnegative")
        # cache as [ix, iy, iz]
        self._arr = self.values_flat.reshape((r, r, r), order="F")

    @property
    def spacing(self) -> float:
        return 2.0 / (self.resolution - 1)

    def array(self) -> np.ndarray:
        """Values as an (R, R, R) array indexed [ix, iy, iz]."""
        return self._arr

    def value(self, p) -> float:
        return float(self.values(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])

    def values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        r = self.resolution
        u = (np.clip(points, -1.0, 1.0) + 1.0) / self.spacing
        i0 = np.clip(np.floor(u).astype(np.int64), 0, r - 2)
        f = u - i0
        a = self._arr
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c000 = a[ix, iy, iz]
        c100 = a[ix + 1, iy, iz]
        c010 = a[ix, iy + 1, iz]
        c110 = a[ix + 1, iy + 1, iz]
        c001 = a[ix, iy, iz + 1]
        c101 = a[ix + 1, iy, iz + 1]
        c011 = a[ix, iy + 1, iz + 1]
        c111 = a[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def gradient(self, p) -> np.ndarray:
        return self.gradients(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]

    def gradients(self, points: np.ndarray) -> np.ndarray:
        return _central_difference(self, points, self.spacing / 2.0)

    def node_gradients(self) -> np.ndarray:
        """(R, R, R, 3) finite-difference gradients at every node."""
        gx, gy, gz = np.gradient(self._arr, self.spacing)
        return np.stack([gx, gy, gz], axis=-1)


class SphereField(_BatchFromScalar):
    """UDF of a sphere surface: | |p - c| - r |."""

    def __init__(self, center=(0.0, 0.0, 0.0), radius: float = 0.5):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def value(self, p) -> float:
        return abs(float(np.linalg.norm(np.asarray(p, dtype=np.float64) - self.center)) - self.radius)

    def values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.abs(np.linalg.norm(points - self.center, axis=1) - self.radius)

    def gradient(self, p) -> np.ndarray:
        return self.gradients(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d = points - self.center
        n = np.linalg.norm(d, axis=1, keepdims=True)
        radial = np.divide(d, n, out=np.zeros_like(d), where=n > 0)
        return np.where(n > self.radius, radial, -radial)


class PlaneField(_BatchFromScalar):
    """UDF of an infinite plane: |n . (p - p0)|."""

    def __init__(self, point=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0)):
        self.point = np.asarray(point, dtype=np.float64)
        n = np.asarray(normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)

    def value(self, p) -> float:
        return abs(float((np.asarray(p, dtype=np.float64) - self.point) @ self.normal))

    def values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.abs((points - self.point) @ self.normal)

    def gradient(self, p) -> np.ndarray:
        s = float((np.asarray(p, dtype=np.float64) - self.point) @ self.normal)
        return np.sign(s) * self.normal if s != 0 else self.normal.copy()

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        s = np.sign((points - self.point) @ self.normal)
        s[s == 0] = 1.0
        return s[:, None] * self.normal[None, :]


class CylinderField(_BatchFromScalar):
    """UDF of a cylinder surface around the y axis, optionally with end caps."""

    def __init__(self, radius: float = 0.5, half_height: float = 0.6, capped: bool = False):
        self.radius = float(radius)
        self.half_height = float(half_height)
        self.capped = bool(capped)

    def values(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rp = np.hypot(p[:, 0], p[:, 2])
        dy = np.abs(p[:, 1]) - self.half_height
        lateral = np.hypot(np.maximum(dy, 0.0), rp - self.radius)
        if not self.capped:
            return lateral
        cap = np.hypot(np.maximum(rp - self.radius, 0.0), np.abs(np.abs(p[:, 1]) - self.half_height))
        return np.minimum(lateral, cap)

    def value(self, p) -> float:
        return float(self.values(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])

    def gradient(self, p) -> np.ndarray:
        return field_gradient(self, p, h=1e-6)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        return _central_difference(self, points, 1e-6)


class UnionField(_BatchFromScalar):
    """Pointwise minimum of child fields; gradient follows the winning child."""

    def __init__(self, *children: FieldQuery):
        if not children:
            raise ValueError("union needs at least one child")
        self.children = children

    def values(self, points: np.ndarray) -> np.ndarray:
        return np.min([c.values(points) for c in self.children], axis=0)

    def value(self, p) -> float:
        return float(self.values(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])

    def gradient(self, p) -> np.ndarray:
        vals = [c.value(p) for c in self.children]
        return self.children[int(np.argmin(vals))].gradient(p)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        vals = np.stack([c.values(points) for c in self.children])
        grads = np.stack([c.gradients(points) for c in self.children])
        win = np.argmin(vals, axis=0)
        return grads[win, np.arange(len(points))]


class MeshField:
    """Exact mesh UDF backed by a SurfaceIndex (ground truth for tests and sampling)."""

    def __init__(self, index: SurfaceIndex):
        self.index = index

    def value(self, p) -> float:
        return self.index.closest_point(p)[0]

    def values(self, points: np.ndarray) -> np.ndarray:
        return self.index.distances(points)

    def gradient(self, p) -> np.ndarray:
        return self.gradients(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d, q, _ = self.index.closest_points(points)
        diff = points - q
        norm = np.linalg.norm(diff, axis=1, keepdims=True)
        return np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 1e-15)


def _central_difference(field, points: np.ndarray, h: float) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    probes = np.repeat(points, 6, axis=0)
    for axis in range(3):
        probes[2 * axis :: 6, axis] += h
        probes[2 * axis + 1 :: 6, axis] -= h
    vals = field.values(probes).reshape(n, 6)
    return (vals[:, 0::2] - vals[:, 1::2]) / (2.0 * h)


def field_gradient(field: FieldQuery, p, h: float | None = None) -> np.ndarray:
    """Central-difference gradient; analytic fields override via their own method."""
    if h is None:
        h = field.spacing / 2.0 if isinstance(field, UdfGrid) else 1e-5
    if h <= 0:
        raise ValueError("h must be positive")
    return _central_difference(field, np.asarray(p, dtype=np.float64).reshape(1, 3), h)[0]


def project_point(
    field: FieldQuery,
    p,
    max_iters: int = 3,
    eps: float = SURFACE_EPS,
) -> tuple[np.ndarray, bool]:
    """Move p onto the zero level set along the negative gradient.

    Returns (q, ok); ok is False when a vanishing gradient blocked the walk,
    in which case q is the original point.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    q, ok = project_points(field, np.asarray(p, dtype=np.float64).reshape(1, 3), max_iters, eps)
    return q[0], bool(ok[0])


def project_points(
    field: FieldQuery,
    points: np.ndarray,
    max_iters: int = 3,
    eps: float = SURFACE_EPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; flagged points are returned at their original position."""
    pts = np.array(points, dtype=np.float64).reshape(-1, 3)
    orig = pts.copy()
    ok = np.ones(len(pts), dtype=bool)
    active = np.ones(len(pts), dtype=bool)
    for _ in range(max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        vals = field.values(pts[idx])
        done = vals < eps
        active[idx[done]] = False
        idx = idx[~done]
        vals = vals[~done]
        if idx.size == 0:
            break
        grads = field.gradients(pts[idx])
        norms = np.linalg.norm(grads, axis=1)
        bad = norms < 1e-8
        if bad.any():
            ok[idx[bad]] = False
            active[idx[bad]] = False
            idx = idx[~bad]
            grads = grads[~bad]
            norms = norms[~bad]
            vals = vals[~bad]
        if idx.size == 0:
            break
        pts[idx] = pts[idx] - (vals / norms)[:, None] * grads
    pts[~ok] = orig[~ok]
    return pts, ok


def densify_point_cloud(
    field: FieldQuery,
    grid: EvalGrid,
    band: float = 0.1,
    iters: int = 3,
) -> np.ndarray:
    """Project every grid point with value < band onto the surface; drop failures."""
    if band <= 0:
        raise ValueError("band must be positive")
    pts = grid.points()
    vals = field.values(pts)
    seed = pts[vals < band]
    if len(seed) == 0:
        log.warning("densify: no grid point within band %.4g", band)
        return np.empty((0, 3))
    proj, ok = project_points(field, seed, max_iters=iters)
    return proj[ok]


def grid_from_field(field: FieldQuery, resolution: int) -> UdfGrid:
    grid = EvalGrid(resolution)
    vals = field.values(grid.points())
    return UdfGrid(resolution=resolution, values_flat=np.maximum(vals, 0.0))


def grid_from_mesh(index: SurfaceIndex, resolution: int) -> UdfGrid:
    return grid_from_field(MeshField(index), resolution)


def save_grid(grid: UdfGrid, path) -> None:
    """Binary: magic 'UDFG', version u32, R u32, R^3 f32 values (EvalGrid order)."""
    with open(path, "wb") as fh:
        fh.write(_UDFG_MAGIC)
        fh.write(struct.pack("<II", _UDFG_VERSION, grid.resolution))
        fh.write(grid.values_flat.astype("<f4").tobytes())


def load_grid(path) -> UdfGrid:
    with open(path, "rb") as fh:
        if fh.read(4) != _UDFG_MAGIC:
            raise ValueError(f"{path}: not a UDFG file")
        version, r = struct.unpack("<II", fh.read(8))
        if version != _UDFG_VERSION:
            raise ValueError(f"{path}: unsupported UDFG version {version}")
        vals = np.frombuffer(fh.read(r**3 * 4), dtype="<f4").astype(np.float64)
    return UdfGrid(resolution=r, values_flat=vals)
