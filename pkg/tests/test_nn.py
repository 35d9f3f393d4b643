"""Unit tests for the CNN core: forward/backward, SGD, checkpoints."""

import numpy as np
import pytest

from icontrain import nn
from icontrain.errors import CheckpointFormatError, NumericError, ShapeError


def reduced_model(seed=0, dtype=np.float32):
    return nn.init_model(patch_size=21, num_filters=4, fc_units=10,
                         seed=seed, dtype=dtype)


def zero_model(**kw):
    m = reduced_model(**kw)
    for name in nn.PARAM_ORDER:
        m.params[name][...] = 0.0
    return m


class TestForward:
    def test_all_zero_weights_give_half_half(self):
        m = zero_model()
        patch = np.zeros((21, 21))
        np.testing.assert_allclose(nn.forward(m, patch), [0.5, 0.5])

    def test_feature_map_arithmetic_patch_47(self):
        assert nn.feature_map_sizes(47) == (43, 21, 17, 8)
        assert nn.flattened_dim(47, 48) == 48 * 8 * 8

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(1)
        m = reduced_model(seed=2)
        patches = rng.uniform(0, 1, (32, 21, 21))
        probs = nn.forward_batch(m, patches)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs >= 0).all() and (probs <= 1).all()

    def test_forward_is_pure(self):
        rng = np.random.default_rng(3)
        m = reduced_model(seed=3)
        patch = rng.uniform(0, 1, (21, 21))
        a = nn.forward(m, patch)
        b = nn.forward(m, patch)
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        m = reduced_model()
        with pytest.raises(ShapeError):
            nn.forward(m, np.zeros((23, 23)))


def max_relative_gradient_error(model, patch, target, eps=1e-4, per_array=12):
    """Central finite differences against the analytic gradient on a
    random subset of each parameter array."""
    rng = np.random.default_rng(99)
    grads, _ = nn.backward(model, patch, target)
    worst = 0.0
    for name in nn.PARAM_ORDER:
        arr = model.params[name]
        for fi in rng.integers(0, arr.size, size=min(per_array, arr.size)):
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            _, lp = nn.backward(model, patch, target)
            arr[idx] = orig - eps
            _, lm = nn.backward(model, patch, target)
            arr[idx] = orig
            fd = (lp - lm) / (2 * eps)
            g = grads[name][idx]
            denom = max(abs(fd), abs(g), 1e-8)
            worst = max(worst, abs(fd - g) / denom)
    return worst


class TestBackward:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for case in range(5):
            m = reduced_model(seed=case, dtype=np.float64)
            patch = rng.uniform(0, 1, (21, 21))
            target = np.eye(2)[rng.integers(0, 2)]
            assert max_relative_gradient_error(m, patch, target) < 1e-4

    def test_prediction_equal_target_gives_zero_gradients(self):
        # zero weights predict (0.5, 0.5); with that exact target the
        # softmax input gradient, hence every gradient, vanishes
        m = zero_model()
        grads, _ = nn.backward(m, np.zeros((21, 21)), np.array([0.5, 0.5]))
        for name in nn.PARAM_ORDER:
            np.testing.assert_array_equal(grads[name], 0.0)

    def test_perfect_prediction_has_zero_loss(self):
        m = zero_model(dtype=np.float64)
        # bias the output layer to make class 1 a near-certainty
        m.params["out_bias"][...] = [-60.0, 60.0]
        _, loss = nn.backward(m, np.zeros((21, 21)), np.array([0.0, 1.0]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_target_shape_rejected(self):
        m = reduced_model()
        with pytest.raises(ShapeError):
            nn.backward_batch(m, np.zeros((2, 21, 21)), np.zeros((2, 3)))


class TestSgdMomentum:
    def _scalar_setup(self):
        m = zero_model()
        m.params["out_bias"][...] = 1.0
        zeros = {k: np.zeros_like(v) for k, v in m.params.items()}
        g = {k: np.zeros_like(v) for k, v in m.params.items()}
        g["out_bias"][...] = 1.0
        return m, zeros, g

    def test_scalar_recurrence(self):
        m, _, g = self._scalar_setup()
        cfg = nn.SgdConfig(learning_rate=0.01, momentum=0.9)
        m1 = nn.sgd_momentum_step(m, g, cfg)
        np.testing.assert_allclose(m1.velocities["out_bias"], -0.01, rtol=1e-6)
        np.testing.assert_allclose(m1.params["out_bias"], 0.99, rtol=1e-6)
        m2 = nn.sgd_momentum_step(m1, g, cfg)
        np.testing.assert_allclose(m2.velocities["out_bias"], -0.019, rtol=1e-5)
        np.testing.assert_allclose(m2.params["out_bias"], 0.971, rtol=1e-5)

    def test_zero_gradient_is_identity_on_weights(self):
        m = reduced_model(seed=5)
        g = {k: np.zeros_like(v) for k, v in m.params.items()}
        m2 = nn.sgd_momentum_step(m, g, nn.SgdConfig())
        for name in nn.PARAM_ORDER:
            np.testing.assert_array_equal(m2.params[name], m.params[name])
        assert m2.revision == m.revision + 1

    def test_non_finite_gradient_rejected(self):
        m = reduced_model()
        g = {k: np.zeros_like(v) for k, v in m.params.items()}
        g["fc_bias"][0] = np.nan
        with pytest.raises(NumericError):
            nn.sgd_momentum_step(m, g, nn.SgdConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            nn.SgdConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            nn.SgdConfig(momentum=1.0)


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        m = reduced_model(seed=11)
        g = {k: np.ones_like(v) * 0.01 for k, v in m.params.items()}
        m = nn.sgd_momentum_step(m, g, nn.SgdConfig())
        m = nn.CnnModel(m.params, m.velocities, m.patch_size, m.num_filters,
                        m.fc_units, 0.875, m.revision)
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(m, path)
        loaded = nn.load_checkpoint(path)
        assert loaded.patch_size == m.patch_size
        assert loaded.revision == m.revision
        assert loaded.validation_accuracy == m.validation_accuracy
        for name in nn.PARAM_ORDER:
            np.testing.assert_array_equal(loaded.params[name], m.params[name])
            np.testing.assert_array_equal(loaded.velocities[name], m.velocities[name])

    def test_truncated_file_is_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(reduced_model(), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            nn.load_checkpoint(path)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(reduced_model(), path)
        data = bytearray(path.read_bytes())
        data[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointFormatError, match="version 99"):
            nn.load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="magic"):
            nn.load_checkpoint(path)
