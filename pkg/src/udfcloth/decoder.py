"""Latent-conditioned distance decoder: a fully-connected network over
Fourier-encoded coordinates concatenated with a per-shape latent code,
trained auto-decoder style (shared network, one learnable latent per shape).

Everything is plain numpy with explicit reverse-mode gradients; the editing
loop downstream needs d(output)/d(point) and d(output)/d(latent) in addition
to parameter gradients, so the backward pass returns all three.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .sampling import UdfSampleSet

__all__ = [
    "DecoderConfig",
    "DecoderField",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "LatentFieldView",
    "fourier_encode",
    "decoder_value",
    "decoder_gradients",
    "loss_clamped_l1",
    "loss_geo_reg",
    "loss_latent_reg",
    "total_loss",
    "lr_at_epoch",
    "train_auto_decoder",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)

_UDFD_MAGIC = b"UDFD"
_UDFD_VERSION = 1


@dataclass(frozen=True)
class DecoderConfig:
    latent_dim: int = 64
    hidden_width: int = 128
    n_layers: int = 5  # number of weight matrices, input layer included
    fourier_octaves: int = 6

    @classmethod
    def paper(cls, latent_dim: int = 64) -> "DecoderConfig":
        return cls(latent_dim=latent_dim, hidden_width=512, n_layers=9, fourier_octaves=6)

    @property
    def enc_dim(self) -> int:
        return 3 + 6 * self.fourier_octaves

    @property
    def in_dim(self) -> int:
        return self.enc_dim + self.latent_dim


def _frequencies(octaves: int) -> np.ndarray:
    return (2.0 ** np.arange(octaves)) * np.pi


def fourier_encode(points: np.ndarray, octaves: int) -> np.ndarray:
    """[p, sin(2^k pi p), cos(2^k pi p)] for k = 0..octaves-1; (n, 3 + 6*octaves)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    freqs = _frequencies(octaves)
    ang = p[:, None, :] * freqs[None, :, None]  # (n, K, 3)
    return np.concatenate([p, np.sin(ang).reshape(len(p), -1), np.cos(ang).reshape(len(p), -1)], axis=1)


def _fourier_backprop(points: np.ndarray, grad_enc: np.ndarray, octaves: int) -> np.ndarray:
    """Chain (n, enc_dim) gradients back to (n, 3) point gradients."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    freqs = _frequencies(octaves)
    ang = p[:, None, :] * freqs[None, :, None]
    k = octaves
    g_raw = grad_enc[:, :3]
    g_sin = grad_enc[:, 3 : 3 + 3 * k].reshape(len(p), k, 3)
    g_cos = grad_enc[:, 3 + 3 * k :].reshape(len(p), k, 3)
    d_sin = np.cos(ang) * freqs[None, :, None]
    d_cos = -np.sin(ang) * freqs[None, :, None]
    return g_raw + (g_sin * d_sin).sum(axis=1) + (g_cos * d_cos).sum(axis=1)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class DecoderField:
    """Network parameters plus forward/backward passes. Output is softplus, so >= 0."""

    config: DecoderConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    _weights32: list[np.ndarray] | None = field(default=None, repr=False)

    @classmethod
    def initialize(cls, config: DecoderConfig, rng: np.random.Generator) -> "DecoderField":
        dims = [config.in_dim] + [config.hidden_width] * (config.n_layers - 1) + [1]
        weights, biases = [], []
        for i in range(config.n_layers):
            fan_in = dims[i]
            if i < config.n_layers - 1:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, dims[i + 1]))
                b = np.zeros(dims[i + 1])
            else:
                w = rng.normal(0.0, 0.01, size=(fan_in, 1))
                # start below the clamp threshold (softplus(-3) ~ 0.05): predictions
                # born above delta are clipped and receive no gradient at all
                b = np.full(1, -3.0)
            weights.append(w)
            biases.append(b)
        return cls(config=config, weights=weights, biases=biases)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def check_finite(self) -> None:
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("decoder parameters are not finite")

    def _weights_f32(self) -> list[np.ndarray]:
        if self._weights32 is None or len(self._weights32) != 2 * len(self.weights):
            self._weights32 = [w.astype(np.float32) for w in self.weights] + [
                b.astype(np.float32) for b in self.biases
            ]
        return self._weights32

    def invalidate_cache(self) -> None:
        self._weights32 = None

    def forward(self, points: np.ndarray, latents: np.ndarray, want_cache: bool = False):
        """points (n, 3), latents (n, L) -> predictions (n,), optional cache for backward."""
        enc = fourier_encode(points, self.config.fourier_octaves)
        x = np.concatenate([enc, np.asarray(latents, dtype=np.float64).reshape(len(enc), -1)], axis=1)
        acts = [x]
        h = x
        for i in range(self.config.n_layers - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
            acts.append(h)
        a_out = (h @ self.weights[-1] + self.biases[-1]).reshape(-1)
        pred = _softplus(a_out)
        if not want_cache:
            return pred
        return pred, {"acts": acts, "a_out": a_out, "points": points}

    def forward_f32(self, points: np.ndarray, latents: np.ndarray) -> np.ndarray:
        """float32 forward pass for latency-sensitive dense evaluation."""
        params = self._weights_f32()
        n = self.config.n_layers
        enc = fourier_encode(points, self.config.fourier_octaves).astype(np.float32)
        x = np.concatenate([enc, np.asarray(latents, dtype=np.float32).reshape(len(enc), -1)], axis=1)
        h = x
        for i in range(n - 1):
            h = np.maximum(h @ params[i] + params[n + i], np.float32(0.0))
        a_out = (h @ params[n - 1] + params[2 * n - 1]).reshape(-1)
        return _softplus(a_out.astype(np.float64))

    def point_gradients_f32(self, points: np.ndarray, latents: np.ndarray) -> np.ndarray:
        """float32 dD/dp per sample (no parameter or latent gradients): the
        projection walk needs only a direction and tolerates reduced precision."""
        params = self._weights_f32()
        n = self.config.n_layers
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        enc = fourier_encode(points, self.config.fourier_octaves).astype(np.float32)
        x = np.concatenate([enc, np.asarray(latents, dtype=np.float32).reshape(len(enc), -1)], axis=1)
        acts = [x]
        h = x
        for i in range(n - 1):
            h = np.maximum(h @ params[i] + params[n + i], np.float32(0.0))
            acts.append(h)
        a_out = (h @ params[n - 1] + params[2 * n - 1]).reshape(-1)
        delta = _sigmoid(a_out.astype(np.float64)).astype(np.float32).reshape(-1, 1)
        for i in range(n - 1, -1, -1):
            delta = delta @ params[i].T
            if i > 0:
                delta = delta * (acts[i] > 0)
        return _fourier_backprop(points, delta[:, : self.config.enc_dim].astype(np.float64), self.config.fourier_octaves)

    def backward(self, cache: dict, dpred: np.ndarray, want_param_grads: bool = True):
        """Reverse pass. Returns (param_grads, dpoints (n,3), dlatents (n,L)).

        param_grads is a list of (dW, db) pairs summed over the batch (None when
        not requested); the input gradients stay per-sample.
        """
        acts, a_out = cache["acts"], cache["a_out"]
        delta = (np.asarray(dpred, dtype=np.float64) * _sigmoid(a_out)).reshape(-1, 1)
        param_grads: list[tuple[np.ndarray, np.ndarray]] | None = (
            [None] * self.config.n_layers if want_param_grads else None
        )
        for i in range(self.config.n_layers - 1, -1, -1):
            if want_param_grads:
                param_grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (acts[i] > 0)
        enc_dim = self.config.enc_dim
        dpoints = _fourier_backprop(cache["points"], delta[:, :enc_dim], self.config.fourier_octaves)
        dlatents = delta[:, enc_dim:]
        return param_grads, dpoints, dlatents

    def gradients(self, points: np.ndarray, latents: np.ndarray):
        """(pred, dD/dp per sample, dD/dz per sample) at unit output gradient."""
        pred, cache = self.forward(points, latents, want_cache=True)
        _, dpoints, dlatents = self.backward(cache, np.ones_like(pred), want_param_grads=False)
        return pred, dpoints, dlatents


def decoder_value(decoder: DecoderField, p, z) -> float:
    decoder.check_finite()
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    return float(decoder.forward(np.asarray(p, dtype=np.float64).reshape(1, 3), z)[0])


def decoder_gradients(decoder: DecoderField, p, z):
    """(param_grads, dD/dp (3,), dD/dz (L,)) for a single point/latent pair."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    pred, cache = decoder.forward(np.asarray(p, dtype=np.float64).reshape(1, 3), z, want_cache=True)
    param_grads, dp, dz = decoder.backward(cache, np.ones(1))
    return param_grads, dp[0], dz[0]


class LatentFieldView:
    """FieldQuery adapter: the decoder at a fixed latent code.

    fast=True runs dense value queries in float32 (half the matmul cost); the
    analytic gradients stay float64. guard=True floors values outside the
    trusted shell (|p|_inf > 0.95): shapes are normalized to max coordinate
    0.8, but at the domain boundary every Fourier sine vanishes at once and
    the extrapolated field can dip spuriously toward zero.
    """

    GUARD_LIMIT = 0.95
    GUARD_FLOOR = 0.5

    def __init__(self, decoder: DecoderField, z: np.ndarray, fast: bool = False, guard: bool = True):
        self.decoder = decoder
        self.z = np.asarray(z, dtype=np.float64).reshape(-1)
        self.fast = fast
        self.guard = guard

    def _tile(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.z, (n, len(self.z)))

    def value(self, p) -> float:
        return float(self.values(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])

    def values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.fast:
            out = self.decoder.forward_f32(points, self._tile(len(points)))
        else:
            out = self.decoder.forward(points, self._tile(len(points)))
        if self.guard:
            outside = np.abs(points).max(axis=1) > self.GUARD_LIMIT
            if outside.any():
                out = np.where(outside, np.maximum(out, self.GUARD_FLOOR), out)
        return out

    def gradient(self, p) -> np.ndarray:
        return self.gradients(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.fast:
            return self.decoder.point_gradients_f32(points, self._tile(len(points)))
        _, dp, _ = self.decoder.gradients(points, self._tile(len(points)))
        return dp


# ---------------------------------------------------------------------------
# Losses and schedule
# ---------------------------------------------------------------------------


def loss_clamped_l1(pred, gt, delta: float):
    """|min(pred, delta) - min(gt, delta)| on nonnegative distances."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return np.abs(np.minimum(pred, delta) - np.minimum(gt, delta))


def loss_geo_reg(preds, gamma_geo: float) -> float:
    """Mean exp(-gamma * pred): pushes the field away from spurious zero sets."""
    if gamma_geo <= 0:
        raise ValueError("gamma_geo must be positive")
    return float(np.mean(np.exp(-gamma_geo * np.asarray(preds, dtype=np.float64))))


def loss_latent_reg(z, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return lam * float(np.linalg.norm(np.asarray(z, dtype=np.float64)))


def lr_at_epoch(epoch: int, cfg: "TrainConfig", alpha: float) -> float:
    """alpha * lr_init * omega^floor(epoch / gamma_step)."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return alpha * cfg.lr_init * cfg.omega ** (epoch // cfg.gamma_step)


@dataclass(frozen=True)
class TrainConfig:
    delta: float = 0.1
    latent_weight: float = 1e-4  # strength of the latent-norm penalty
    gamma_geo: float = 60.0
    geo_enabled: bool = True
    geo_weight: float = 0.01
    lr_init: float = 0.5e-3
    omega: float = 0.5
    gamma_step: int = 500
    alpha_encoder: float = 1.0  # latent-code group
    alpha_decoder: float = 0.1  # network group
    batch_size: int = 4
    epochs: int = 300
    points_per_step: int = 128
    latent_init_std: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.omega < 1.0:
            raise ValueError("omega must be in (0, 1)")
        if self.gamma_step < 1:
            raise ValueError("gamma_step must be >= 1")

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls(batch_size=16, epochs=2000)


def total_loss(preds, gts, z, cfg: TrainConfig):
    """Mean clamped L1 + latent penalty + (optional) geometric regularizer.

    Returns (total, components dict); the components sum exactly to the total.
    """
    preds = np.asarray(preds, dtype=np.float64)
    comps = {
        "clamped_l1": float(np.mean(loss_clamped_l1(preds, np.asarray(gts, dtype=np.float64), cfg.delta))),
        "latent_reg": loss_latent_reg(z, cfg.latent_weight),
        "geo_reg": cfg.geo_weight * loss_geo_reg(preds, cfg.gamma_geo) if cfg.geo_enabled else 0.0,
    }
    return comps["clamped_l1"] + comps["latent_reg"] + comps["geo_reg"], comps


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, lr: float, components: dict):
        self.epoch = epoch
        self.lr = lr
        self.components = components
        super().__init__(f"non-finite loss at epoch {epoch} (lr={lr:.3g}): {components}")


class _Adam:
    def __init__(self, shapes, beta1, beta2, eps):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class TrainResult:
    decoder: DecoderField
    latents: dict[str, np.ndarray]
    history: list[dict]
    manifest: dict


def train_auto_decoder(
    samples: list[UdfSampleSet],
    cfg: TrainConfig,
    decoder_config: DecoderConfig | None = None,
    out_dir=None,
) -> TrainResult:
    """Jointly fit the shared decoder and one latent per sample set.

    Deterministic for a fixed seed. Raises TrainingDivergedError on NaN loss.
    """
    if not samples:
        raise ValueError("need at least one sample set")
    dcfg = decoder_config or DecoderConfig()
    rng = np.random.default_rng(cfg.seed)
    decoder = DecoderField.initialize(dcfg, rng)
    n_shapes = len(samples)
    names = [s.mesh_name or f"shape{i}" for i, s in enumerate(samples)]
    latents = rng.normal(0.0, cfg.latent_init_std, size=(n_shapes, dcfg.latent_dim))

    opt_params = _Adam([w.shape for w in decoder.weights] + [b.shape for b in decoder.biases],
                       cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt_latents = _Adam([latents.shape], cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr_net = lr_at_epoch(epoch, cfg, cfg.alpha_decoder)
        lr_lat = lr_at_epoch(epoch, cfg, cfg.alpha_encoder)
        order = rng.permutation(n_shapes)
        perms = [rng.permutation(len(samples[i])) for i in range(n_shapes)]
        epoch_sums = {"clamped_l1": 0.0, "geo_reg": 0.0, "latent_reg": 0.0}
        epoch_rows = 0

        for g0 in range(0, n_shapes, cfg.batch_size):
            group = order[g0 : g0 + cfg.batch_size]
            n_chunks = max(int(np.ceil(len(samples[i]) / cfg.points_per_step)) for i in group)
            for c in range(n_chunks):
                rows_p, rows_d, rows_s = [], [], []
                for si in group:
                    sel = perms[si][c * cfg.points_per_step : (c + 1) * cfg.points_per_step]
                    if sel.size == 0:
                        continue
                    rows_p.append(samples[si].points[sel])
                    rows_d.append(samples[si].distances[sel])
                    rows_s.append(np.full(sel.size, si))
                if not rows_p:
                    continue
                pts = np.concatenate(rows_p)
                gts = np.concatenate(rows_d)
                sidx = np.concatenate(rows_s)
                n_rows = len(pts)

                pred, cache = decoder.forward(pts, latents[sidx], want_cache=True)
                l1 = loss_clamped_l1(pred, gts, cfg.delta)
                dpred = np.sign(np.minimum(pred, cfg.delta) - np.minimum(gts, cfg.delta)) * (pred < cfg.delta)
                dpred /= n_rows
                geo_val = 0.0
                if cfg.geo_enabled:
                    e = np.exp(-cfg.gamma_geo * pred)
                    geo_val = cfg.geo_weight * float(e.mean())
                    dpred += cfg.geo_weight * (-cfg.gamma_geo) * e / n_rows

                param_grads, _, dlat_rows = decoder.backward(cache, dpred)

                lat_grad = np.zeros_like(latents)
                np.add.at(lat_grad, sidx, dlat_rows)
                for si in group:
                    nz = np.linalg.norm(latents[si])
                    if nz > 1e-12:
                        lat_grad[si] += cfg.latent_weight * latents[si] / nz

                flat_grads = [pg[0] for pg in param_grads] + [pg[1] for pg in param_grads]
                opt_params.step(decoder.weights + decoder.biases, flat_grads, lr_net)
                opt_latents.step([latents], [lat_grad], lr_lat)

                epoch_sums["clamped_l1"] += float(l1.sum())
                epoch_sums["geo_reg"] += geo_val * n_rows
                epoch_rows += n_rows

        comp = {
            "clamped_l1": epoch_sums["clamped_l1"] / max(epoch_rows, 1),
            "geo_reg": epoch_sums["geo_reg"] / max(epoch_rows, 1),
            "latent_reg": float(np.mean([loss_latent_reg(latents[i], cfg.latent_weight) for i in range(n_shapes)])),
        }
        comp["total"] = comp["clamped_l1"] + comp["geo_reg"] + comp["latent_reg"]
        comp["epoch"] = epoch
        history.append(comp)
        if not np.isfinite(comp["total"]):
            raise TrainingDivergedError(epoch, lr_net, comp)
        if cfg.checkpoint_every and out_dir is not None and (epoch + 1) % cfg.checkpoint_every == 0:
            decoder.invalidate_cache()
            save_checkpoint(f"{out_dir}/ckpt_epoch{epoch + 1:05d}.udfd", decoder, dict(zip(names, latents)))

    decoder.invalidate_cache()
    lat_map = {name: latents[i].copy() for i, name in enumerate(names)}
    manifest = {"decoder_config": asdict(dcfg), "train_config": asdict(cfg), "shapes": names,
                "final": history[-1] if history else None}
    return TrainResult(decoder=decoder, latents=lat_map, history=history, manifest=manifest)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------


def save_checkpoint(path, decoder: DecoderField, latents: dict[str, np.ndarray]) -> None:
    """Binary 'UDFD': config block, f32 parameter blob, name-prefixed latent entries."""
    cfg = decoder.config
    blob = np.concatenate(
        [w.ravel() for w in decoder.weights] + [b.ravel() for b in decoder.biases]
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_UDFD_MAGIC)
        fh.write(struct.pack("<IIIII", _UDFD_VERSION, cfg.latent_dim, cfg.hidden_width, cfg.n_layers, cfg.fourier_octaves))
        fh.write(struct.pack("<Q", blob.size))
        fh.write(blob.tobytes())
        fh.write(struct.pack("<I", len(latents)))
        for name, z in latents.items():
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(np.asarray(z, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[DecoderField, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != _UDFD_MAGIC:
            raise ValueError(f"{path}: not a UDFD checkpoint")
        version, latent_dim, hidden, n_layers, octaves = struct.unpack("<IIIII", fh.read(20))
        if version != _UDFD_VERSION:
            raise ValueError(f"{path}: unsupported UDFD version {version}")
        cfg = DecoderConfig(latent_dim=latent_dim, hidden_width=hidden, n_layers=n_layers, fourier_octaves=octaves)
        (blob_size,) = struct.unpack("<Q", fh.read(8))
        blob = np.frombuffer(fh.read(blob_size * 4), dtype="<f4").astype(np.float64)
        dims = [cfg.in_dim] + [cfg.hidden_width] * (cfg.n_layers - 1) + [1]
        weights, biases, off = [], [], 0
        for i in range(cfg.n_layers):
            size = dims[i] * dims[i + 1]
            weights.append(blob[off : off + size].reshape(dims[i], dims[i + 1]).copy())
            off += size
        for i in range(cfg.n_layers):
            biases.append(blob[off : off + dims[i + 1]].copy())
            off += dims[i + 1]
        if off != blob_size:
            raise ValueError(f"{path}: parameter blob size mismatch")
        (n_latents,) = struct.unpack("<I", fh.read(4))
        latents: dict[str, np.ndarray] = {}
        for _ in range(n_latents):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            latents[name] = np.frombuffer(fh.read(latent_dim * 4), dtype="<f4").astype(np.float64)
    return DecoderField(config=cfg, weights=weights, biases=biases), latents
