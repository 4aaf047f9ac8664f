"""Depth rendering, contour sketches, and the multi-view sketch/mesh pair dataset.

Cameras are orthographic: the 2D pixel gradient of a contour loss lifts to 3D
exactly through the rotation transpose, with no focal-length terms.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image

from .mesh import TriMesh

__all__ = [
    "CameraPose",
    "DepthMap",
    "SketchImage",
    "render_depth",
    "contour_from_depth",
    "project_contour",
    "build_pair_dataset",
    "save_sketch_png",
    "load_sketch_png",
    "sketch_from_png_bytes",
    "sketch_to_png_bytes",
    "load_manifest",
    "pose_from_manifest_entry",
]

log = logging.getLogger(__name__)

BACKGROUND = np.inf
_DEPTH_OFFSET = 2.0  # keeps depths positive for any point in [-1, 1]^3


@dataclass(frozen=True)
class CameraPose:
    """Orthographic camera: azimuth/elevation in radians, pixel scale per world unit."""

    azimuth: float = 0.0
    elevation: float = 0.0
    width: int = 256
    height: int = 256
    scale: float | None = None

    def __post_init__(self):
        if self.width < 32 or self.height < 32:
            raise ValueError("image size must be at least 32x32")
        if self.scale is None:
            object.__setattr__(self, "scale", min(self.width, self.height) / 2.0)

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; camera right = +u, up = +v."""
        ca, sa = math.cos(-self.azimuth), math.sin(-self.azimuth)
        ce, se = math.cos(self.elevation), math.sin(self.elevation)
        ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
        return rx @ ry

    def project(self, points: np.ndarray) -> np.ndarray:
        """(n, 3) world points -> (n, 3) [px, py, depth]; smaller depth is nearer."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation().T
        px = p[:, 0] * self.scale + (self.width - 1) / 2.0
        py = -p[:, 1] * self.scale + (self.height - 1) / 2.0
        depth = _DEPTH_OFFSET - p[:, 2]
        return np.column_stack([px, py, depth])

    def backproject(self, pixels: np.ndarray) -> np.ndarray:
        """Inverse of project: (n, 3) [px, py, depth] -> (n, 3) world points."""
        q = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
        u = (q[:, 0] - (self.width - 1) / 2.0) / self.scale
        v = -(q[:, 1] - (self.height - 1) / 2.0) / self.scale
        w = _DEPTH_OFFSET - q[:, 2]
        return np.column_stack([u, v, w]) @ self.rotation()

    def lift_image_vector(self, vectors_2d: np.ndarray) -> np.ndarray:
        """Adjoint of the pixel projection: (n, 2) [d/dpx, d/dpy] -> (n, 3) world vectors."""
        v = np.asarray(vectors_2d, dtype=np.float64).reshape(-1, 2)
        cam = np.column_stack([v[:, 0] * self.scale, -v[:, 1] * self.scale, np.zeros(len(v))])
        return cam @ self.rotation()


@dataclass
class DepthMap:
    """Per-pixel nearest depth; background pixels hold +inf."""

    values: np.ndarray  # (H, W) float64

    @property
    def foreground(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass
class SketchImage:
    """Binary contour raster, ink = 0 and background = 1, with its camera pose."""

    raster: np.ndarray  # (H, W) uint8 in {0, 1}
    pose: CameraPose

    def __post_init__(self):
        self.raster = np.asarray(self.raster, dtype=np.uint8)
        if self.raster.ndim != 2:
            raise ValueError("raster must be 2D")
        bad = ~np.isin(self.raster, (0, 1))
        if bad.any():
            raise ValueError("sketch raster must be binary (0=ink, 1=background)")

    @property
    def ink_mask(self) -> np.ndarray:
        return self.raster == 0

    def ink_points(self) -> np.ndarray:
        """Ink pixel centers as (n, 2) [x, y] in pixel coordinates."""
        ys, xs = np.nonzero(self.ink_mask)
        return np.column_stack([xs.astype(np.float64), ys.astype(np.float64)])

    @property
    def n_ink(self) -> int:
        return int(self.ink_mask.sum())


@njit(cache=True)
def _rasterize(proj, tris, depth):
    h, w = depth.shape
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0, d0 = proj[i0, 0], proj[i0, 1], proj[i0, 2]
        x1, y1, d1 = proj[i1, 0], proj[i1, 1], proj[i1, 2]
        x2, y2, d2 = proj[i2, 0], proj[i2, 1], proj[i2, 2]
        denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(denom) < 1e-12:
            continue  # edge-on triangle: no pixel coverage
        xmin = max(int(math.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(math.floor(max(x0, x1, x2))), w - 1)
        ymin = max(int(math.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(math.floor(max(y0, y1, y2))), h - 1)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                b0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / denom
                b1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / denom
                b2 = 1.0 - b0 - b1
                if b0 >= -1e-12 and b1 >= -1e-12 and b2 >= -1e-12:
                    d = b0 * d0 + b1 * d1 + b2 * d2
                    if d < depth[py, px]:
                        depth[py, px] = d
    return depth


def render_depth(mesh: TriMesh, pose: CameraPose) -> DepthMap:
    """Software-rasterize per-pixel nearest depth; both triangle sides are visible."""
    depth = np.full((pose.height, pose.width), BACKGROUND)
    if mesh.n_triangles == 0:
        return DepthMap(values=depth)
    proj = pose.project(mesh.vertices)
    _rasterize(np.ascontiguousarray(proj), mesh.triangles, depth)
    return DepthMap(values=depth)


def close_footprint(fg: np.ndarray, radius: int) -> np.ndarray:
    """Morphological closing: fills pinholes and hairline cracks up to ~radius px.

    Erosion treats the outside of the frame as foreground so frame-touching
    regions are not eaten away.
    """
    if radius <= 0 or not fg.any():
        return fg
    from scipy import ndimage

    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    disc = xx * xx + yy * yy <= radius * radius
    dil = ndimage.binary_dilation(fg, structure=disc)
    return ndimage.binary_erosion(dil, structure=disc, border_value=1)


def contour_from_depth(
    depth: DepthMap,
    pose: CameraPose | None = None,
    depth_edge_threshold: float = 0.03,
    include_depth_edges: bool = False,
    close_radius: int = 2,
) -> SketchImage:
    """Ink where the footprint meets background or (optionally) where depth jumps.

    Depth jumps capture interior silhouettes such as a sleeve in front of a
    torso; the default is the pure outer silhouette, which is the convention
    the latent-editing loss compares against (its projected contour comes from
    surface samples and carries no interior lines). close_radius smooths away
    pinholes from imperfect (reconstructed) meshes before taking the boundary.
    """
    d = depth.values
    fg_raw = np.isfinite(d)
    fg = close_footprint(fg_raw, close_radius)
    ink = np.zeros_like(fg)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        nb_fg = np.roll(fg, shift, axis=axis)
        nb_fg_raw = np.roll(fg_raw, shift, axis=axis)
        nb_d = np.roll(d, shift, axis=axis)
        # the rolled-in border row/column counts as background
        if axis == 0:
            sl = np.s_[0, :] if shift == 1 else np.s_[-1, :]
        else:
            sl = np.s_[:, 0] if shift == 1 else np.s_[:, -1]
        nb_fg[sl] = False
        nb_fg_raw[sl] = False
        nb_d[sl] = np.inf
        edge = fg & ~nb_fg
        if include_depth_edges:
            # jumps are only meaningful between two truly rendered pixels
            with np.errstate(invalid="ignore"):
                jump = fg_raw & nb_fg_raw & (np.abs(d - nb_d) > depth_edge_threshold)
            edge |= jump
        ink |= edge
    raster = np.where(ink, 0, 1).astype(np.uint8)
    if pose is None:
        pose = CameraPose(width=d.shape[1], height=d.shape[0])
    return SketchImage(raster=raster, pose=pose)


def project_contour(mesh: TriMesh, pose: CameraPose, **contour_kwargs) -> np.ndarray:
    """Contour ink pixel centers of the mesh rendered at pose, as (n, 2) [x, y].

    Shares the sketch-generation path, so comparing a mesh against its own
    sketch yields zero chamfer. An empty footprint returns an empty set.
    """
    if mesh.n_triangles == 0:
        raise ValueError("cannot project an empty mesh")
    sketch = contour_from_depth(render_depth(mesh, pose), pose, **contour_kwargs)
    pts = sketch.ink_points()
    if len(pts) == 0:
        log.warning("project_contour: empty footprint at azimuth %.3f", pose.azimuth)
    return pts


def save_sketch_png(sketch: SketchImage, path) -> None:
    """8-bit grayscale PNG, ink = 0 and background = 255."""
    Image.fromarray(sketch.raster * np.uint8(255), mode="L").save(path, format="PNG")


def load_sketch_png(path, pose: CameraPose | None = None) -> SketchImage:
    """Binarize at 128 following the ink=0 convention (dark pixels are ink)."""
    img = Image.open(path).convert("L")
    arr = np.asarray(img)
    raster = (arr >= 128).astype(np.uint8)
    if pose is None:
        pose = CameraPose(width=arr.shape[1], height=arr.shape[0])
    return SketchImage(raster=raster, pose=pose)


def sketch_from_png_bytes(data: bytes, pose: CameraPose | None = None) -> SketchImage:
    import io

    img = Image.open(io.BytesIO(data)).convert("L")
    arr = np.asarray(img)
    raster = (arr >= 128).astype(np.uint8)
    if pose is None:
        pose = CameraPose(width=arr.shape[1], height=arr.shape[0])
    return SketchImage(raster=raster, pose=pose)


def sketch_to_png_bytes(sketch: SketchImage) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(sketch.raster * np.uint8(255), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def build_pair_dataset(
    meshes: list[TriMesh],
    n_views: int,
    out_dir,
    width: int = 256,
    height: int = 256,
    elevation: float = 0.0,
    include_depth_edges: bool = False,
    depth_edge_threshold: float = 0.03,
) -> list[dict]:
    """Render n_views uniformly spaced azimuth sketches per mesh and write a manifest.

    Failures on individual meshes are logged and skipped; the batch continues.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = "silhouette+depth_edges" if include_depth_edges else "silhouette"
    entries: list[dict] = []
    for mesh in meshes:
        name = mesh.name or f"mesh{len(entries)}"
        for k in range(n_views):
            azimuth = 2.0 * math.pi * k / n_views
            pose = CameraPose(azimuth=azimuth, elevation=elevation, width=width, height=height)
            try:
                sketch = contour_from_depth(
                    render_depth(mesh, pose),
                    pose,
                    depth_edge_threshold=depth_edge_threshold,
                    include_depth_edges=include_depth_edges,
                )
            except Exception:
                log.exception("render failed for %s view %d; skipping", name, k)
                continue
            fname = f"{name}_az{round(math.degrees(azimuth)):03d}.png"
            save_sketch_png(sketch, out_dir / fname)
            entries.append(
                {
                    "sketch_path": fname,
                    "mesh_name": name,
                    "azimuth_deg": math.degrees(azimuth),
                    "elevation_deg": math.degrees(elevation),
                    "image_size": [width, height],
                    "contour_mode": mode,
                }
            )
    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    return entries


def load_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def pose_from_manifest_entry(entry: dict) -> CameraPose:
    w, h = entry["image_size"]
    return CameraPose(
        azimuth=math.radians(entry["azimuth_deg"]),
        elevation=math.radians(entry["elevation_deg"]),
        width=w,
        height=h,
    )
