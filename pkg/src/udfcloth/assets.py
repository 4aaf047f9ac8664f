"""Procedural test meshes: a watertight sphere plus open garment-like surfaces."""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh

__all__ = ["uv_sphere", "open_cylinder", "drape_sheet", "bundled_meshes"]


def uv_sphere(rows: int = 48, cols: int = 96, radius: float = 1.0) -> TriMesh:
    """Watertight UV sphere (shared poles, wrapped seam); zero boundary edges."""
    if rows < 3 or cols < 3:
        raise ValueError("rows >= 3 and cols >= 3 required")
    verts = [(0.0, radius, 0.0)]
    for r in range(1, rows):
        phi = np.pi * r / rows
        y = radius * np.cos(phi)
        s = radius * np.sin(phi)
        for c in range(cols):
            th = 2.0 * np.pi * c / cols
            verts.append((s * np.cos(th), y, s * np.sin(th)))
    verts.append((0.0, -radius, 0.0))
    top = 0
    bottom = len(verts) - 1

    def ring(r, c):
        return 1 + (r - 1) * cols + (c % cols)

    tris = []
    for c in range(cols):
        tris.append((top, ring(1, c + 1), ring(1, c)))
    for r in range(1, rows - 1):
        for c in range(cols):
            a, b = ring(r, c), ring(r, c + 1)
            d, e = ring(r + 1, c), ring(r + 1, c + 1)
            tris.append((a, b, e))
            tris.append((a, e, d))
    for c in range(cols):
        tris.append((bottom, ring(rows - 1, c), ring(rows - 1, c + 1)))
    return TriMesh(np.array(verts), np.array(tris), name="sphere")


def open_cylinder(
    radial: int = 32,
    rings: int = 8,
    radius: float = 0.55,
    height: float = 1.6,
    flare: float = 0.3,
) -> TriMesh:
    """Open tube around the y axis (a skirt when flared): exactly 2*radial boundary edges.

    flare widens the radius linearly toward the bottom ring; 0 gives a straight tube.
    """
    if radial < 3 or rings < 1:
        raise ValueError("radial >= 3 and rings >= 1 required")
    verts = []
    for r in range(rings + 1):
        t = r / rings  # 0 at top, 1 at bottom
        y = height / 2.0 - t * height
        rad = radius + flare * t
        for c in range(radial):
            th = 2.0 * np.pi * c / radial
            verts.append((rad * np.cos(th), y, rad * np.sin(th)))

    def vid(r, c):
        return r * radial + (c % radial)

    tris = []
    for r in range(rings):
        for c in range(radial):
            a, b = vid(r, c), vid(r, c + 1)
            d, e = vid(r + 1, c), vid(r + 1, c + 1)
            tris.append((a, b, e))
            tris.append((a, e, d))
    return TriMesh(np.array(verts), np.array(tris), name="skirt")


def drape_sheet(nu: int = 24, nv: int = 24) -> TriMesh:
    """Open curved sheet with a left/right asymmetric sag; boundary edges on the full rim."""
    if nu < 2 or nv < 2:
        raise ValueError("nu >= 2 and nv >= 2 required")
    us = np.linspace(-1.0, 1.0, nu + 1)
    vs = np.linspace(-1.0, 1.0, nv + 1)
    verts = []
    for v in vs:
        for u in us:
            # asymmetric bend: deeper sag toward +u, slight twist along v
            z = 0.45 * np.cos(0.9 * u + 0.4) * (1.0 - 0.25 * v) + 0.1 * u * v
            verts.append((u, v * (0.9 - 0.15 * u), z))

    def vid(i, j):
        return i * (nu + 1) + j

    tris = []
    for i in range(nv):
        for j in range(nu):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            tris.append((a, b, d))
            tris.append((a, d, c))
    return TriMesh(np.array(verts), np.array(tris), name="drape")


def bundled_meshes() -> dict[str, TriMesh]:
    """The test corpus: one watertight and two open surfaces."""
    return {
        "sphere": uv_sphere(),
        "skirt": open_cylinder(),
        "drape": drape_sheet(),
    }
