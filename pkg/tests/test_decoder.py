import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udfcloth.decoder import (
    DecoderConfig,
    DecoderField,
    LatentFieldView,
    TrainConfig,
    decoder_gradients,
    decoder_value,
    fourier_encode,
    load_checkpoint,
    loss_clamped_l1,
    loss_geo_reg,
    loss_latent_reg,
    lr_at_epoch,
    save_checkpoint,
    total_loss,
    train_auto_decoder,
)
from udfcloth.sampling import UdfSampleSet


@pytest.fixture(scope="module")
def small_decoder():
    cfg = DecoderConfig(latent_dim=16, hidden_width=32, n_layers=4, fourier_octaves=4)
    return DecoderField.initialize(cfg, np.random.default_rng(5))


def relu_pattern(decoder, p, z):
    _, cache = decoder.forward(np.reshape(p, (1, 3)), np.reshape(z, (1, -1)), want_cache=True)
    return tuple((a > 0).ravel().tobytes() for a in cache["acts"][1:])


def stencil_is_smooth(decoder, p, z, h, dims):
    """True when the ReLU activation pattern is constant over the FD stencil."""
    pats = {relu_pattern(decoder, p, z)}
    for i in range(dims):
        if dims == 3:
            e = np.zeros(3)
            e[i] = h
            pats.add(relu_pattern(decoder, p + e, z))
            pats.add(relu_pattern(decoder, p - e, z))
        else:
            e = np.zeros(len(z))
            e[i] = h
            pats.add(relu_pattern(decoder, p, z + e))
            pats.add(relu_pattern(decoder, p, z - e))
    return len(pats) == 1


class TestFourierEncoding:
    def test_shape(self):
        enc = fourier_encode(np.zeros((5, 3)), 6)
        assert enc.shape == (5, 3 + 36)

    def test_zero_point(self):
        enc = fourier_encode(np.zeros((1, 3)), 2)
        assert np.allclose(enc[0, :3], 0)
        assert np.allclose(enc[0, 3:9], 0)  # sines
        assert np.allclose(enc[0, 9:], 1)  # cosines


class TestDecoderForward:
    def test_nonnegative_and_finite(self, small_decoder, rng):
        pts = rng.uniform(-1, 1, (200, 3))
        z = rng.normal(0, 0.5, (200, small_decoder.config.latent_dim))
        out = small_decoder.forward(pts, z)
        assert np.all(np.isfinite(out))
        assert np.all(out >= 0)

    def test_pure_function(self, small_decoder, rng):
        p = rng.uniform(-1, 1, 3)
        z = rng.normal(0, 0.5, small_decoder.config.latent_dim)
        assert decoder_value(small_decoder, p, z) == decoder_value(small_decoder, p, z)

    def test_f32_path_close_to_f64(self, small_decoder, rng):
        pts = rng.uniform(-1, 1, (500, 3))
        z = np.tile(rng.normal(0, 0.5, small_decoder.config.latent_dim), (500, 1))
        a = small_decoder.forward(pts, z)
        b = small_decoder.forward_f32(pts, z)
        assert np.abs(a - b).max() < 1e-5

    def test_nonfinite_params_rejected(self, rng):
        cfg = DecoderConfig(latent_dim=4, hidden_width=8, n_layers=3, fourier_octaves=2)
        dec = DecoderField.initialize(cfg, rng)
        dec.weights[0][0, 0] = np.nan
        with pytest.raises(ValueError):
            decoder_value(dec, [0, 0, 0], np.zeros(4))


class TestDecoderGradients:
    def test_matches_finite_differences(self, small_decoder, rng):
        h = 1e-4
        L = small_decoder.config.latent_dim
        checked = 0
        attempts = 0
        while checked < 30 and attempts < 500:
            attempts += 1
            p = rng.uniform(-0.9, 0.9, 3)
            z = rng.normal(0, 0.4, L)
            # central differences are only valid off the ReLU kink set
            if not stencil_is_smooth(small_decoder, p, z, h, 3):
                continue
            _, dp, dz = decoder_gradients(small_decoder, p, z)
            fd_p = np.zeros(3)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                fd_p[i] = (decoder_value(small_decoder, p + e, z) - decoder_value(small_decoder, p - e, z)) / (2 * h)
            assert np.linalg.norm(fd_p - dp) <= 1e-3 * max(np.linalg.norm(fd_p), 1e-8)
            u = rng.normal(size=L)
            u /= np.linalg.norm(u)
            fd_z = (decoder_value(small_decoder, p, z + h * u) - decoder_value(small_decoder, p, z - h * u)) / (2 * h)
            assert abs(fd_z - dz @ u) <= 1e-3 * max(abs(fd_z), 1e-8)
            checked += 1
        assert checked == 30

    def test_dead_z_path_gives_zero_z_gradient(self, rng):
        cfg = DecoderConfig(latent_dim=8, hidden_width=16, n_layers=3, fourier_octaves=2)
        dec = DecoderField.initialize(cfg, rng)
        dec.weights[0][cfg.enc_dim :, :] = 0.0  # sever the latent pathway
        _, _, dz = decoder_gradients(dec, rng.uniform(-1, 1, 3), rng.normal(0, 0.5, 8))
        assert np.allclose(dz, 0)

    def test_final_layer_linearity(self, small_decoder, rng):
        import copy

        p = rng.uniform(-0.5, 0.5, 3)
        z = rng.normal(0, 0.4, small_decoder.config.latent_dim)
        _, cache = small_decoder.forward(p.reshape(1, 3), z.reshape(1, -1), want_cache=True)
        a1 = cache["a_out"][0]
        _, _, dz1 = decoder_gradients(small_decoder, p, z)

        doubled = copy.deepcopy(small_decoder)
        doubled.weights[-1] = 2.0 * doubled.weights[-1]
        doubled.biases[-1] = 2.0 * doubled.biases[-1]
        _, cache2 = doubled.forward(p.reshape(1, 3), z.reshape(1, -1), want_cache=True)
        a2 = cache2["a_out"][0]
        _, _, dz2 = decoder_gradients(doubled, p, z)

        def sigmoid(x):
            return 1.0 / (1.0 + np.exp(-x))

        pre1 = dz1 / sigmoid(a1)
        pre2 = dz2 / sigmoid(a2)
        assert np.allclose(pre2, 2.0 * pre1, rtol=1e-10)


class TestLosses:
    def test_clamped_l1_below_threshold(self):
        assert loss_clamped_l1(0.05, 0.02, 0.1) == pytest.approx(0.03)

    def test_clamped_l1_both_clipped(self):
        assert loss_clamped_l1(0.5, 0.3, 0.1) == pytest.approx(0.0)

    def test_clamped_l1_mixed(self):
        assert loss_clamped_l1(0.05, 0.3, 0.1) == pytest.approx(0.05)

    def test_geo_reg_all_zero(self):
        assert loss_geo_reg(np.zeros(10), 60.0) == pytest.approx(1.0)

    def test_geo_reg_limit(self):
        assert loss_geo_reg(np.full(4, 1e9), 60.0) == pytest.approx(0.0)

    def test_geo_reg_direct(self):
        g = 60.0
        preds = np.array([0.0, np.log(2) / g])
        assert loss_geo_reg(preds, g) == pytest.approx(0.75)

    def test_latent_reg_zero(self):
        assert loss_latent_reg(np.zeros(8), 1e-4) == 0.0

    def test_latent_reg_345(self):
        z = np.zeros(8)
        z[0], z[1] = 3.0, 4.0
        assert loss_latent_reg(z, 1e-4) == pytest.approx(5e-4)

    @given(st.floats(0, 100), st.floats(0.01, 10))
    def test_latent_reg_homogeneous(self, c, lam):
        z = np.array([1.0, -2.0, 2.0])
        assert loss_latent_reg(c * z, lam) == pytest.approx(c * loss_latent_reg(z, lam), rel=1e-9)

    def test_total_decomposition(self, rng):
        cfg = TrainConfig()
        preds = rng.uniform(0, 0.5, 100)
        gts = rng.uniform(0, 0.5, 100)
        z = rng.normal(0, 0.3, 16)
        total, comps = total_loss(preds, gts, z, cfg)
        assert total == pytest.approx(sum(comps.values()), abs=1e-12)
        assert all(v >= 0 for v in comps.values())

    def test_total_perfect_predictions(self):
        cfg = TrainConfig()
        preds = np.full(50, 0.2)  # >= delta, so clamped L1 vanishes
        total, comps = total_loss(preds, preds.copy(), np.zeros(8), cfg)
        assert comps["clamped_l1"] == 0.0
        assert comps["latent_reg"] == 0.0
        assert total == pytest.approx(comps["geo_reg"])


class TestLrSchedule:
    def test_epoch0(self):
        assert lr_at_epoch(0, TrainConfig(), 1.0) == pytest.approx(0.5e-3)

    def test_epoch500(self):
        assert lr_at_epoch(500, TrainConfig(), 1.0) == pytest.approx(0.25e-3)

    def test_epoch999_decoder_alpha(self):
        assert lr_at_epoch(999, TrainConfig(), 0.1) == pytest.approx(0.025e-3)

    @settings(max_examples=50)
    @given(st.integers(0, 5000))
    def test_piecewise_constant(self, epoch):
        cfg = TrainConfig()
        base = lr_at_epoch(epoch, cfg, 1.0)
        # constant within a step window
        assert lr_at_epoch((epoch // 500) * 500, cfg, 1.0) == base
        # halves exactly at multiples of gamma_step
        assert lr_at_epoch(epoch + 500, cfg, 1.0) == pytest.approx(base * 0.5)


def _toy_sample_sets(rng, n=400):
    """Two tiny analytic shapes: sphere-ish and plane-ish distance samples."""
    sets = []
    pts = rng.uniform(-0.9, 0.9, (n, 3))
    sets.append(UdfSampleSet(points=pts, distances=np.abs(np.linalg.norm(pts, axis=1) - 0.5), mesh_name="ball"))
    pts2 = rng.uniform(-0.9, 0.9, (n, 3))
    sets.append(UdfSampleSet(points=pts2, distances=np.abs(pts2[:, 2]), mesh_name="slab"))
    return sets


class TestTraining:
    def test_zero_epochs_returns_init(self, rng):
        sets = _toy_sample_sets(rng)
        cfg = TrainConfig(epochs=0, seed=3)
        dcfg = DecoderConfig(latent_dim=8, hidden_width=16, n_layers=3, fourier_octaves=2)
        res = train_auto_decoder(sets, cfg, dcfg)
        fresh = DecoderField.initialize(dcfg, np.random.default_rng(3))
        for a, b in zip(res.decoder.weights, fresh.weights):
            assert np.array_equal(a, b)
        assert res.history == []

    def test_loss_decreases(self, rng):
        sets = _toy_sample_sets(rng)
        cfg = TrainConfig(epochs=40, seed=3, points_per_step=64)
        dcfg = DecoderConfig(latent_dim=8, hidden_width=32, n_layers=3, fourier_octaves=3)
        res = train_auto_decoder(sets, cfg, dcfg)
        assert res.history[-1]["clamped_l1"] < res.history[0]["clamped_l1"]

    def test_deterministic(self, rng):
        sets = _toy_sample_sets(rng, n=100)
        cfg = TrainConfig(epochs=5, seed=9, points_per_step=32)
        dcfg = DecoderConfig(latent_dim=4, hidden_width=8, n_layers=3, fourier_octaves=2)
        a = train_auto_decoder(sets, cfg, dcfg)
        b = train_auto_decoder(sets, cfg, dcfg)
        for wa, wb in zip(a.decoder.weights, b.decoder.weights):
            assert np.array_equal(wa, wb)
        assert np.array_equal(a.latents["ball"], b.latents["ball"])

    def test_distinct_latents(self, rng):
        sets = _toy_sample_sets(rng)
        cfg = TrainConfig(epochs=30, seed=3, points_per_step=64)
        dcfg = DecoderConfig(latent_dim=8, hidden_width=32, n_layers=3, fourier_octaves=3)
        res = train_auto_decoder(sets, cfg, dcfg)
        assert np.linalg.norm(res.latents["ball"] - res.latents["slab"]) > 0

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            train_auto_decoder([], TrainConfig())


class TestCheckpoint:
    def test_roundtrip(self, small_decoder, tmp_path, rng):
        latents = {"a": rng.normal(0, 0.3, 16), "b": rng.normal(0, 0.3, 16)}
        path = tmp_path / "d.udfd"
        save_checkpoint(path, small_decoder, latents)
        dec2, lat2 = load_checkpoint(path)
        assert dec2.config == small_decoder.config
        assert set(lat2) == {"a", "b"}
        # parameters stored as f32
        for w1, w2 in zip(small_decoder.weights, dec2.weights):
            assert np.abs(w1 - w2).max() < 1e-6
        pts = rng.uniform(-1, 1, (50, 3))
        z = np.tile(lat2["a"], (50, 1))
        assert np.abs(small_decoder.forward(pts, z) - dec2.forward(pts, z)).max() < 1e-5

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.udfd"
        p.write_bytes(b"JUNK" + b"\x00" * 40)
        with pytest.raises(ValueError):
            load_checkpoint(p)


class TestLatentFieldView:
    def test_field_protocol(self, small_decoder, rng):
        from udfcloth.fields import FieldQuery

        view = LatentFieldView(small_decoder, rng.normal(0, 0.3, 16))
        assert isinstance(view, FieldQuery)
        pts = rng.uniform(-1, 1, (20, 3))
        assert np.all(view.values(pts) >= 0)
        assert view.gradients(pts).shape == (20, 3)

    def test_fast_matches_accurate(self, small_decoder, rng):
        z = rng.normal(0, 0.3, 16)
        pts = rng.uniform(-1, 1, (100, 3))
        slow = LatentFieldView(small_decoder, z).values(pts)
        fast = LatentFieldView(small_decoder, z, fast=True).values(pts)
        assert np.abs(slow - fast).max() < 1e-5
