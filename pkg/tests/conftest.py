import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from udfcloth.assets import bundled_meshes
from udfcloth.mesh import SurfaceIndex, normalize_mesh


@pytest.fixture(scope="session")
def meshes():
    """Bundled test meshes, normalized to max |coord| = 0.8."""
    out = {}
    for name, mesh in bundled_meshes().items():
        norm, _ = normalize_mesh(mesh, 0.8)
        out[name] = norm
    return out


@pytest.fixture(scope="session")
def indices(meshes):
    return {name: SurfaceIndex(m) for name, m in meshes.items()}


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)


@dataclass
class ToyTraining:
    decoder: object
    latents: dict
    history: list
    train_config: object
    held_out: dict  # name -> UdfSampleSet of near-surface + surface samples


TRAIN_SEED = 0
SAMPLE_SEED = 7
HELDOUT_SEED = 1234


def _training_sample_sets(meshes, indices):
    from udfcloth.sampling import SamplingSpec, sample_udf_training_set

    rng = np.random.default_rng(SAMPLE_SEED)
    spec = SamplingSpec.desk(divisor=10)  # 12,000 samples per shape
    return [sample_udf_training_set(meshes[n], indices[n], spec, rng) for n in sorted(meshes)]


def _held_out_sets(meshes, indices):
    from udfcloth.sampling import SamplingSpec, sample_udf_training_set

    spec = SamplingSpec(n_total=800, n_near=500, n_mid=0, n_surface=300, n_box=0)
    return {
        n: sample_udf_training_set(meshes[n], indices[n], spec, np.random.default_rng(HELDOUT_SEED))
        for n in sorted(meshes)
    }


@pytest.fixture(scope="session")
def toy_training(meshes, indices):
    """The desk-scale 3-shape auto-decoder run shared across editor/service tests.

    Set UDFCLOTH_TEST_CACHE to a directory to reuse the checkpoint between
    test sessions (it is keyed on the training recipe).
    """
    from udfcloth.decoder import TrainConfig, load_checkpoint, save_checkpoint, train_auto_decoder

    cfg = TrainConfig(epochs=300, points_per_step=128, seed=TRAIN_SEED)
    cache_dir = os.environ.get("UDFCLOTH_TEST_CACHE")
    key = f"toy_e{cfg.epochs}_pps{cfg.points_per_step}_s{cfg.seed}_d10_v3"
    held_out = _held_out_sets(meshes, indices)
    if cache_dir:
        ckpt = Path(cache_dir) / f"{key}.udfd"
        hist = Path(cache_dir) / f"{key}.history.json"
        if ckpt.exists() and hist.exists():
            decoder, latents = load_checkpoint(ckpt)
            return ToyTraining(decoder, latents, json.loads(hist.read_text()), cfg, held_out)
    result = train_auto_decoder(_training_sample_sets(meshes, indices), cfg)
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_checkpoint(Path(cache_dir) / f"{key}.udfd", result.decoder, result.latents)
        (Path(cache_dir) / f"{key}.history.json").write_text(json.dumps(result.history))
    return ToyTraining(result.decoder, result.latents, result.history, cfg, held_out)


@pytest.fixture(scope="session")
def toy_captures(toy_training):
    """Silhouette sketch of each trained shape's own reconstruction at the front pose."""
    from udfcloth.decoder import LatentFieldView
    from udfcloth.fields import grid_from_field
    from udfcloth.mesher import extract_mesh
    from udfcloth.sketch import CameraPose, contour_from_depth, render_depth

    pose = CameraPose()
    out = {}
    for name, z in toy_training.latents.items():
        mesh = extract_mesh(grid_from_field(LatentFieldView(toy_training.decoder, z, fast=True), 64))
        out[name] = (mesh, contour_from_depth(render_depth(mesh, pose), pose))
    return out


@pytest.fixture(scope="session")
def gt_sketches(meshes):
    """Ground-truth silhouette sketches of the bundled meshes at the front pose."""
    from udfcloth.sketch import CameraPose, contour_from_depth, render_depth

    pose = CameraPose()
    return {n: contour_from_depth(render_depth(m, pose), pose) for n, m in meshes.items()}
