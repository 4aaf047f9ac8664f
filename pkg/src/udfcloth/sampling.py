"""Banded UDF training-set generation and regular evaluation grids.

Every stored distance is re-measured exactly against the surface index; the
band offsets only steer where samples land, never what supervision they carry.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mesh import SurfaceIndex, TriMesh, sample_surface

__all__ = [
    "SamplingSpec",
    "UdfSampleSet",
    "EvalGrid",
    "sample_udf_training_set",
    "make_eval_grid",
    "save_sample_set",
    "load_sample_set",
]

_UDFS_MAGIC = b"UDFS"
_UDFS_VERSION = 1


@dataclass(frozen=True)
class SamplingSpec:
    """Sample counts per band plus band widths and the bounding-box half extent."""

    n_total: int = 120_000
    n_near: int = 48_000
    n_mid: int = 32_000
    n_surface: int = 24_000
    n_box: int = 16_000
    band_near: float = 0.05
    band_mid: float = 0.3
    box_half_extent: float = 1.0

    def __post_init__(self):
        if self.n_near + self.n_mid + self.n_surface + self.n_box != self.n_total:
            raise ValueError("band counts must sum to n_total")
        if self.band_near <= 0 or self.band_mid <= 0 or self.box_half_extent <= 0:
            raise ValueError("bands and box extent must be positive")

    @classmethod
    def paper(cls) -> "SamplingSpec":
        return cls()

    @classmethod
    def desk(cls, divisor: int = 100) -> "SamplingSpec":
        """All counts divided by `divisor` (default 1200 samples total)."""
        return cls(
            n_total=120_000 // divisor,
            n_near=48_000 // divisor,
            n_mid=32_000 // divisor,
            n_surface=24_000 // divisor,
            n_box=16_000 // divisor,
        )


@dataclass
class UdfSampleSet:
    """(point, exact unsigned distance) pairs for one mesh."""

    points: np.ndarray  # (n, 3) float64
    distances: np.ndarray  # (n,) float64, >= 0
    mesh_name: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.distances = np.asarray(self.distances, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.distances):
            raise ValueError("points/distances length mismatch")
        if self.distances.size and self.distances.min() < 0:
            raise ValueError("distances must be nonnegative")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class EvalGrid:
    """Regular grid over [-1, 1]^3, x varying fastest."""

    resolution: int

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    @property
    def spacing(self) -> float:
        return 2.0 / (self.resolution - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.resolution)

    def points(self) -> np.ndarray:
        """(R^3, 3) points; linear index = ix + R*iy + R^2*iz."""
        r = self.resolution
        ax = self.axis
        z, y, x = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def __len__(self) -> int:
        return self.resolution**3


def make_eval_grid(resolution: int) -> EvalGrid:
    return EvalGrid(resolution)


def _banded_points(index: SurfaceIndex, n: int, band: float, rng: np.random.Generator) -> np.ndarray:
    """Surface points offset along random directions by a uniform magnitude in [0, band].

    Concavity can only shrink the true distance below the offset magnitude, so
    the in-band check never rejects in theory; points are redrawn defensively
    if numerical noise ever lands one outside.
    """
    out = np.empty((n, 3))
    remaining = np.arange(n)
    attempts = 0
    while remaining.size:
        k = remaining.size
        base = sample_surface(index.mesh, k, rng)
        dirs = rng.normal(size=(k, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        mag = rng.random(k) * band
        cand = base + dirs * mag[:, None]
        dist = index.distances(cand)
        ok = dist <= band + 1e-12
        out[remaining[ok]] = cand[ok]
        remaining = remaining[~ok]
        attempts += 1
        if attempts > 100:
            raise RuntimeError("band sampling failed to converge")
    return out


def sample_udf_training_set(
    mesh: TriMesh,
    index: SurfaceIndex,
    spec: SamplingSpec,
    rng: np.random.Generator,
) -> UdfSampleSet:
    """Draw the banded sample mix (near, mid, surface, box — in that order).

    Expects a normalized mesh contained in the sampling box. All stored
    distances are exact re-measurements, not the generating offsets.
    """
    h = spec.box_half_extent
    if np.abs(mesh.vertices).max() > h + 1e-9:
        raise ValueError("mesh exceeds the sampling box; normalize it first")

    near = _banded_points(index, spec.n_near, spec.band_near, rng)
    mid = _banded_points(index, spec.n_mid, spec.band_mid, rng)
    surf = sample_surface(mesh, spec.n_surface, rng) if spec.n_surface else np.empty((0, 3))
    box = rng.uniform(-h, h, size=(spec.n_box, 3))
    points = np.concatenate([near, mid, surf, box])
    distances = index.distances(points)
    return UdfSampleSet(points=points, distances=distances, mesh_name=mesh.name)


def save_sample_set(sample_set: UdfSampleSet, path) -> None:
    """Binary little-endian: magic 'UDFS', version u32, count u64, then (xyz f32, d f32) records."""
    n = len(sample_set)
    rec = np.empty((n, 4), dtype="<f4")
    rec[:, :3] = sample_set.points
    rec[:, 3] = sample_set.distances
    with open(path, "wb") as fh:
        fh.write(_UDFS_MAGIC)
        fh.write(struct.pack("<IQ", _UDFS_VERSION, n))
        fh.write(rec.tobytes())


def load_sample_set(path, mesh_name: str = "") -> UdfSampleSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _UDFS_MAGIC:
            raise ValueError(f"{path}: not a UDFS file")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != _UDFS_VERSION:
            raise ValueError(f"{path}: unsupported UDFS version {version}")
        rec = np.frombuffer(fh.read(n * 16), dtype="<f4").reshape(n, 4)
    return UdfSampleSet(points=rec[:, :3].astype(np.float64), distances=rec[:, 3].astype(np.float64), mesh_name=mesh_name)
