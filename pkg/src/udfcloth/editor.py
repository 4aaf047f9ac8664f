"""Latent-space editing: fit the decoded shape's projected contour to a target
sketch by gradient descent on the latent code.

The chain is: densify a surface cloud from the decoder field, pick the samples
that generate the current silhouette, project them, measure the symmetric 2D
chamfer against the sketch ink, and pull the loss gradient back through the
projection and the decoder's latent pathway.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .decoder import DecoderField, LatentFieldView
from .fields import project_points
from .sampling import make_eval_grid
from .sketch import CameraPose, SketchImage

__all__ = [
    "SketchDistanceField",
    "chamfer_2d",
    "chamfer_points",
    "EMPTY_CHAMFER",
    "EditConfig",
    "EditSession",
    "silhouette_samples",
    "latent_gradient",
    "optimize_latent",
    "densify_from_latent",
]

log = logging.getLogger(__name__)

# sentinel for a chamfer evaluation with an empty side; optimization aborts on it
EMPTY_CHAMFER = 1e12


class SketchDistanceField:
    """Exact Euclidean distance transform of a sketch plus nearest-ink lookups.

    Distances are exact at pixel centers; for continuous query points the
    nearest ink pixel is taken from the four surrounding centers' indices,
    which is exact up to half-pixel pathologies.
    """

    def __init__(self, sketch: SketchImage):
        self.sketch = sketch
        ink = sketch.ink_mask
        if ink.any():
            dist, (iy, ix) = ndimage.distance_transform_edt(~ink, return_indices=True)
        else:
            dist = np.full(sketch.raster.shape, EMPTY_CHAMFER)
            iy = np.zeros(sketch.raster.shape, dtype=np.int64)
            ix = np.zeros(sketch.raster.shape, dtype=np.int64)
        self.distances = dist
        self._nearest_x = ix
        self._nearest_y = iy
        self.ink_points = sketch.ink_points()

    @property
    def has_ink(self) -> bool:
        return len(self.ink_points) > 0

    def nearest_ink(self, points: np.ndarray) -> np.ndarray:
        """(n, 2) continuous pixel points -> (n, 2) nearest ink pixel centers."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        h, w = self.distances.shape
        x0 = np.clip(np.floor(p[:, 0]).astype(np.int64), 0, w - 1)
        y0 = np.clip(np.floor(p[:, 1]).astype(np.int64), 0, h - 1)
        best_d2 = np.full(len(p), np.inf)
        best = np.zeros((len(p), 2))
        for dx in (0, 1):
            for dy in (0, 1):
                xs = np.clip(x0 + dx, 0, w - 1)
                ys = np.clip(y0 + dy, 0, h - 1)
                cand = np.column_stack([self._nearest_x[ys, xs], self._nearest_y[ys, xs]]).astype(np.float64)
                d2 = ((p - cand) ** 2).sum(axis=1)
                take = d2 < best_d2
                best_d2[take] = d2[take]
                best[take] = cand[take]
        return best


def chamfer_points(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean-of-squares chamfer between two 2D point sets (size-invariant)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return EMPTY_CHAMFER
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float((d_ab**2).mean() + (d_ba**2).mean())


def chamfer_2d(projected: np.ndarray, sketch: SketchImage | SketchDistanceField) -> float:
    """Eq.-style symmetric sum: projected->ink squared distances + ink->projected.

    Returns EMPTY_CHAMFER when either side is empty; callers must not keep
    optimizing on the sentinel.
    """
    sdf = sketch if isinstance(sketch, SketchDistanceField) else SketchDistanceField(sketch)
    projected = np.asarray(projected, dtype=np.float64).reshape(-1, 2)
    if len(projected) == 0 or not sdf.has_ink:
        log.warning("chamfer_2d: empty point set (projected=%d, ink=%d)", len(projected), len(sdf.ink_points))
        return EMPTY_CHAMFER
    nearest = sdf.nearest_ink(projected)
    term1 = ((projected - nearest) ** 2).sum()
    d_ba = cKDTree(projected).query(sdf.ink_points)[0]
    return float(term1 + (d_ba**2).sum())


# ---------------------------------------------------------------------------
# Silhouette sample selection
# ---------------------------------------------------------------------------


def silhouette_samples(
    points3d: np.ndarray,
    pose: CameraPose,
    splat_radius: int | None = None,
    grid_spacing: float | None = None,
):
    """Select the surface samples that generate the cloud's 2D silhouette.

    The cloud is splatted into a depth buffer; footprint-boundary pixels are
    contour pixels, and each one is owned by the candidate point whose
    projection lies closest in 2D. Returns (owner indices, their projected
    2D positions), one entry per contour pixel.
    """
    pts = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 2))
    proj = pose.project(pts)
    if splat_radius is None:
        pitch = (grid_spacing or 0.04) * pose.scale
        splat_radius = max(1, int(np.ceil(0.75 * pitch)))
    w, h = pose.width, pose.height
    px = proj[:, 0]
    py = proj[:, 1]
    ix = np.round(px).astype(np.int64)
    iy = np.round(py).astype(np.int64)
    inside = (ix >= -splat_radius) & (ix < w + splat_radius) & (iy >= -splat_radius) & (iy < h + splat_radius)

    occupied = np.zeros((h, w), dtype=bool)
    offsets = [
        (dx, dy)
        for dx in range(-splat_radius, splat_radius + 1)
        for dy in range(-splat_radius, splat_radius + 1)
        if dx * dx + dy * dy <= splat_radius * splat_radius
    ]
    for dx, dy in offsets:
        xs = ix[inside] + dx
        ys = iy[inside] + dy
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        occupied[ys[ok], xs[ok]] = True
    from .sketch import close_footprint

    occupied = close_footprint(occupied, 2)

    boundary = occupied & ~(
        np.roll(occupied, 1, 0) & np.roll(occupied, -1, 0) & np.roll(occupied, 1, 1) & np.roll(occupied, -1, 1)
    )
    # frame rows/cols: rolled wrap-around must not fake interior-ness
    boundary[0, :] = occupied[0, :]
    boundary[-1, :] = occupied[-1, :]
    boundary[:, 0] |= occupied[:, 0]
    boundary[:, -1] |= occupied[:, -1]
    by, bx = np.nonzero(boundary)
    if len(bx) == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 2))

    cand_idx = np.flatnonzero(inside)
    tree = cKDTree(np.column_stack([px[cand_idx], py[cand_idx]]))
    _, owner_local = tree.query(np.column_stack([bx.astype(np.float64), by.astype(np.float64)]))
    owners = cand_idx[owner_local]
    return owners, np.column_stack([px[owners], py[owners]])


# ---------------------------------------------------------------------------
# Eq. 10: chamfer gradient with respect to the latent code
# ---------------------------------------------------------------------------


def latent_gradient(
    decoder: DecoderField,
    z: np.ndarray,
    pose: CameraPose,
    sketch: SketchImage | SketchDistanceField,
    surface_samples: np.ndarray,
    projected: np.ndarray | None = None,
    lift_dirs: np.ndarray | None = None,
    grad_min: float = 0.15,
) -> tuple[np.ndarray, float]:
    """d(chamfer)/dz summed over silhouette samples; returns (gradient, chamfer).

    Per sample v: the 2D chamfer gradient at its projection lifts to a world
    vector through the orthographic adjoint; its component along the surface
    normal direction grad D / |grad D|^2 multiplies -dD/dz. Near the zero set a
    learned field's gradient can collapse (the softplus valley flattens), so
    samples with |grad D| below grad_min are skipped; more than half skipped
    is an error. lift_dirs overrides the live normal directions with frozen
    ones (used by finite-difference oracles where the anchored step model is
    the function under test).
    """
    sdf = sketch if isinstance(sketch, SketchDistanceField) else SketchDistanceField(sketch)
    v = np.asarray(surface_samples, dtype=np.float64).reshape(-1, 3)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if len(v) == 0 or not sdf.has_ink:
        raise ValueError("latent_gradient needs surface samples and a non-blank sketch")
    p2 = pose.project(v)[:, :2] if projected is None else np.asarray(projected, dtype=np.float64).reshape(-1, 2)

    # chamfer and its gradient w.r.t. each projected point
    nearest = sdf.nearest_ink(p2)
    diff1 = p2 - nearest
    chamfer = float((diff1**2).sum())
    grad2d = 2.0 * diff1
    d_ba, owner = cKDTree(p2).query(sdf.ink_points)
    chamfer += float((d_ba**2).sum())
    pulled = 2.0 * (p2[owner] - sdf.ink_points)
    np.add.at(grad2d, owner, pulled)

    # lift to 3D and push through the decoder
    grad3d = pose.lift_image_vector(grad2d)
    _, d_dp, d_dz = decoder.gradients(v, np.broadcast_to(z, (len(v), len(z))))
    if lift_dirs is not None:
        dirs = np.asarray(lift_dirs, dtype=np.float64).reshape(-1, 3)
        keep = np.ones(len(v), dtype=bool)
    else:
        norms2 = (d_dp**2).sum(axis=1)
        keep = norms2 > grad_min**2
        n_skipped = int((~keep).sum())
        if n_skipped > 0.5 * len(v):
            raise RuntimeError(f"latent_gradient: {n_skipped}/{len(v)} samples had vanishing field gradient")
        dirs = d_dp[keep] / norms2[keep, None]
    scale = (grad3d[keep] * dirs).sum(axis=1)
    grad_z = -(scale[:, None] * d_dz[keep]).sum(axis=0)
    return grad_z, chamfer


@dataclass(frozen=True)
class EditConfig:
    steps: int = 50
    step_size: float = 1e-2
    grid_resolution: int = 48
    band: float = 0.1
    project_iters: int = 3
    max_samples: int = 6000  # cap on densified cloud points fed to the silhouette
    jitter: int = 2  # extra jittered seeds per in-band grid node (finer silhouette)
    stop_mean_px2: float = 30.0  # stop when per-point mean squared chamfer drops below
    # (measured silhouette-noise floor on the toy shapes is 10-21 px^2; cross-shape
    # edits start at 150+ px^2)
    refresh_every: int = 10  # full-grid re-densify cadence; in between, only nodes
    # that were within 2x band last refresh are re-evaluated (the surface cannot
    # cross the margin in a few latent steps)
    divergence_factor: float = 10.0
    divergence_patience: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0


@dataclass
class EditSession:
    z: np.ndarray
    z_init: np.ndarray
    pose: CameraPose
    sketch: SketchImage
    config: EditConfig = field(default_factory=EditConfig)
    history: list[tuple[int, float]] = field(default_factory=list)
    diverged: bool = False

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1).copy()
        self.z_init = np.asarray(self.z_init, dtype=np.float64).reshape(-1).copy()
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent code must be finite")


class _CloudTracker:
    """Densifies the surface cloud per step, re-evaluating only candidate grid
    nodes between full refreshes (far nodes cannot enter the band in a few
    latent steps)."""

    def __init__(self, decoder: DecoderField, cfg: EditConfig, rng: np.random.Generator):
        self.decoder = decoder
        self.cfg = cfg
        self.rng = rng
        self.grid = make_eval_grid(cfg.grid_resolution)
        self.points = self.grid.points()
        self.candidates: np.ndarray | None = None
        self.calls = 0

    def cloud(self, z: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        view = LatentFieldView(self.decoder, z, fast=True)
        refresh = self.candidates is None or (self.calls % max(cfg.refresh_every, 1) == 0)
        self.calls += 1
        if refresh:
            vals = view.values(self.points)
            self.candidates = np.flatnonzero(vals < 2.0 * cfg.band)
            seeds = self.points[vals < cfg.band]
        else:
            vals = view.values(self.points[self.candidates])
            seeds = self.points[self.candidates[vals < cfg.band]]
        if len(seeds) == 0:
            return np.empty((0, 3))
        if cfg.jitter > 0:
            spread = self.grid.spacing / 2.0
            extra = np.concatenate(
                [seeds + self.rng.uniform(-spread, spread, size=seeds.shape) for _ in range(cfg.jitter)]
            )
            seeds = np.concatenate([seeds, extra])
        if len(seeds) > cfg.max_samples:
            stride = int(np.ceil(len(seeds) / cfg.max_samples))
            seeds = seeds[::stride]
        proj, ok = project_points(view, seeds, max_iters=cfg.project_iters)
        # a learned field offers no convergence guarantee: drop walkers that
        # failed to reach the surface or wandered out of the domain
        ok &= view.values(proj) < 0.5 * cfg.band
        ok &= np.abs(proj).max(axis=1) <= 1.0
        return proj[ok]


def densify_from_latent(decoder: DecoderField, z: np.ndarray, cfg: EditConfig, seed: int = 0) -> np.ndarray:
    """One-shot densified cloud at latent z (fresh tracker, full grid pass)."""
    return _CloudTracker(decoder, cfg, np.random.default_rng(seed)).cloud(np.asarray(z, dtype=np.float64))


def _evaluate(tracker: _CloudTracker, z, pose, sdf):
    """(chamfer_sum, chamfer_mean, owners' 3D points, their 2D projections)."""
    cfg = tracker.cfg
    cloud = tracker.cloud(z)
    if len(cloud) == 0:
        return EMPTY_CHAMFER, EMPTY_CHAMFER, np.empty((0, 3)), np.empty((0, 2))
    grid_spacing = 2.0 / (cfg.grid_resolution - 1)
    owners, p2 = silhouette_samples(cloud, pose, grid_spacing=grid_spacing)
    if len(owners) == 0:
        return EMPTY_CHAMFER, EMPTY_CHAMFER, np.empty((0, 3)), np.empty((0, 2))
    ch = chamfer_2d(p2, sdf)
    mean = ch / max(len(p2) + len(sdf.ink_points), 1)
    return ch, mean, cloud[owners], p2


def optimize_latent(session: EditSession, decoder: DecoderField) -> EditSession:
    """Adam descent on the latent code against the session's target sketch.

    The best latent seen (lowest chamfer) is retained, so the reported result
    never regresses below the starting point. Stops early at sub-pixel fits
    (nothing left to gain below rasterization noise) or on divergence.
    """
    cfg = session.config
    rng = np.random.default_rng(cfg.seed)
    sdf = SketchDistanceField(session.sketch)
    tracker = _CloudTracker(decoder, cfg, rng)
    z = session.z.copy()
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    history: list[tuple[int, float]] = []
    diverged = False

    ch, mean, samples, p2 = _evaluate(tracker, z, session.pose, sdf)
    history.append((0, ch))
    best_z, best_ch = z.copy(), ch
    initial_ch = ch
    bad_streak = 0

    if ch >= EMPTY_CHAMFER:
        log.warning("optimize_latent: empty silhouette or sketch at start; nothing to optimize")
        return replace(session, z=best_z, history=history, diverged=True)

    step = 0
    while step < cfg.steps:
        if mean < cfg.stop_mean_px2:
            break  # sub-pixel fit: rasterization noise dominates any further gain
        try:
            grad, _ = latent_gradient(decoder, z, session.pose, sdf, samples, projected=p2)
        except RuntimeError as exc:
            log.warning("optimize_latent: %s; stopping", exc)
            diverged = True
            break
        step += 1
        m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * grad
        v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * grad * grad
        mh = m / (1 - cfg.adam_beta1**step)
        vh = v / (1 - cfg.adam_beta2**step)
        z = z - cfg.step_size * mh / (np.sqrt(vh) + 1e-8)

        ch, mean, samples, p2 = _evaluate(tracker, z, session.pose, sdf)
        history.append((step, ch))
        if ch < best_ch:
            best_ch = ch
            best_z = z.copy()
        if ch > cfg.divergence_factor * max(initial_ch, 1e-12):
            bad_streak += 1
            if bad_streak >= cfg.divergence_patience:
                diverged = True
                log.warning("optimize_latent: diverged after %d steps (chamfer %.3g)", step, ch)
                break
        else:
            bad_streak = 0

    return replace(session, z=best_z, history=history, diverged=diverged)
