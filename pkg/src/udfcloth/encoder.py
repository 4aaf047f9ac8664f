"""Sketch-to-latent encoding by retrieval against the training sketch library.

A learned image encoder is overkill at this scale: nearest-neighbor retrieval
over the rendered training sketches hands the editing loop a latent and pose to
start from, and the loop does the actual fitting. The operation signature is
the seam where a trained encoder could drop in later.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .editor import chamfer_points
from .sketch import CameraPose, SketchImage, load_sketch_png

__all__ = [
    "SketchLibrary",
    "LibraryEntry",
    "sketch_descriptor",
    "build_library",
    "encode_sketch",
    "save_library",
    "load_library",
    "EmptySketchError",
]

log = logging.getLogger(__name__)

DESCRIPTOR_RES = 64
_UDFL_MAGIC = b"UDFL"
_UDFL_VERSION = 1


class EmptySketchError(ValueError):
    """Raised when a sketch has no ink pixels."""


def sketch_descriptor(sketch: SketchImage) -> np.ndarray:
    """64x64 downsampled distance transform, distances in descriptor-pixel units.

    A blank sketch yields an all-max descriptor (degenerate, flagged by callers).
    """
    ink = sketch.ink_mask
    h, w = ink.shape
    if not ink.any():
        return np.full((DESCRIPTOR_RES, DESCRIPTOR_RES), float(DESCRIPTOR_RES * 2), dtype=np.float32)
    dt = ndimage.distance_transform_edt(~ink)
    if h % DESCRIPTOR_RES == 0 and w % DESCRIPTOR_RES == 0:
        small = dt.reshape(DESCRIPTOR_RES, h // DESCRIPTOR_RES, DESCRIPTOR_RES, w // DESCRIPTOR_RES).mean(axis=(1, 3))
    else:
        small = ndimage.zoom(dt, (DESCRIPTOR_RES / h, DESCRIPTOR_RES / w), order=1)
        small = small[:DESCRIPTOR_RES, :DESCRIPTOR_RES]
    scale = DESCRIPTOR_RES / ((h + w) / 2.0)
    return (small * scale).astype(np.float32)


@dataclass
class LibraryEntry:
    shape_name: str
    pose: CameraPose
    latent: np.ndarray
    ink_points: np.ndarray  # (n, 2) float pixel centers
    descriptor: np.ndarray  # (64, 64) float32
    degenerate: bool = False


@dataclass
class SketchLibrary:
    entries: list[LibraryEntry]
    latent_dim: int

    def __len__(self) -> int:
        return len(self.entries)

    def descriptor_matrix(self) -> np.ndarray:
        return np.stack([e.descriptor.ravel() for e in self.entries])


def build_library(
    manifest_entries: list[dict],
    latents: dict[str, np.ndarray],
    sketch_dir,
) -> SketchLibrary:
    """One library entry per (sketch, pose); meshes without a latent are skipped."""
    from .sketch import pose_from_manifest_entry

    sketch_dir = Path(sketch_dir)
    out: list[LibraryEntry] = []
    missing: set[str] = set()
    latent_dim = len(next(iter(latents.values()))) if latents else 0
    for entry in manifest_entries:
        name = entry["mesh_name"]
        if name not in latents:
            missing.add(name)
            continue
        pose = pose_from_manifest_entry(entry)
        sketch = load_sketch_png(sketch_dir / entry["sketch_path"], pose)
        desc = sketch_descriptor(sketch)
        out.append(
            LibraryEntry(
                shape_name=name,
                pose=pose,
                latent=np.asarray(latents[name], dtype=np.float64),
                ink_points=sketch.ink_points(),
                descriptor=desc,
                degenerate=sketch.n_ink == 0,
            )
        )
    if missing:
        log.warning("build_library: no latent for %s; skipped", sorted(missing))
    return SketchLibrary(entries=out, latent_dim=latent_dim)


def encode_sketch(
    sketch: SketchImage,
    library: SketchLibrary,
    k: int = 8,
) -> tuple[np.ndarray, CameraPose, float]:
    """Nearest library entry by exact 2D chamfer over a descriptor-prefiltered top-k.

    Returns (latent copy, entry pose, winning chamfer score).
    """
    if len(library) == 0:
        raise ValueError("sketch library is empty")
    if sketch.n_ink == 0:
        raise EmptySketchError("empty sketch: no ink pixels")
    desc = sketch_descriptor(sketch).ravel()
    mat = library.descriptor_matrix()
    d2 = ((mat - desc[None, :]) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")[: max(1, k)]
    query_pts = sketch.ink_points()
    best_i = -1
    best_score = np.inf
    for i in order:
        entry = library.entries[int(i)]
        if entry.degenerate:
            continue
        score = chamfer_points(query_pts, entry.ink_points)
        if score < best_score:
            best_score = score
            best_i = int(i)
    if best_i < 0:
        raise ValueError("library has only degenerate entries")
    win = library.entries[best_i]
    return win.latent.copy(), win.pose, float(best_score)


def save_library(library: SketchLibrary, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_UDFL_MAGIC)
        fh.write(struct.pack("<III", _UDFL_VERSION, library.latent_dim, len(library.entries)))
        for e in library.entries:
            name = e.shape_name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(
                struct.pack(
                    "<ddIId?",
                    e.pose.azimuth,
                    e.pose.elevation,
                    e.pose.width,
                    e.pose.height,
                    e.pose.scale,
                    e.degenerate,
                )
            )
            fh.write(struct.pack("<I", len(e.ink_points)))
            fh.write(np.asarray(e.ink_points, dtype="<u2").tobytes())
            fh.write(e.descriptor.astype("<f4").tobytes())
            fh.write(np.asarray(e.latent, dtype="<f4").tobytes())


def load_library(path) -> SketchLibrary:
    with open(path, "rb") as fh:
        if fh.read(4) != _UDFL_MAGIC:
            raise ValueError(f"{path}: not a UDFL library file")
        version, latent_dim, n = struct.unpack("<III", fh.read(12))
        if version != _UDFL_VERSION:
            raise ValueError(f"{path}: unsupported UDFL version {version}")
        entries = []
        for _ in range(n):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            azim, elev, w, h, scale, degen = struct.unpack("<ddIId?", fh.read(33))
            (n_ink,) = struct.unpack("<I", fh.read(4))
            ink = np.frombuffer(fh.read(n_ink * 4), dtype="<u2").reshape(n_ink, 2).astype(np.float64)
            desc = np.frombuffer(fh.read(DESCRIPTOR_RES * DESCRIPTOR_RES * 4), dtype="<f4").reshape(
                DESCRIPTOR_RES, DESCRIPTOR_RES
            )
            latent = np.frombuffer(fh.read(latent_dim * 4), dtype="<f4").astype(np.float64)
            entries.append(
                LibraryEntry(
                    shape_name=name,
                    pose=CameraPose(azimuth=azim, elevation=elev, width=w, height=h, scale=scale),
                    latent=latent,
                    ink_points=ink,
                    descriptor=desc.copy(),
                    degenerate=degen,
                )
            )
    return SketchLibrary(entries=entries, latent_dim=latent_dim)
