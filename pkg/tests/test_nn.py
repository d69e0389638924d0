import struct

import numpy as np
import pytest

from latentscope import nn
from conftest import max_rel_error, numerical_grad

SEEDS = range(10)


def _check_layer(layer, x, seed, tol=1e-4):
    """Finite-difference check of input and parameter gradients for L = sum(out * R)."""
    rng = np.random.default_rng(seed + 1000)
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x) * r))

    layer.forward(x)
    gx = layer.backward(r)
    assert max_rel_error(gx, numerical_grad(loss, x)) <= tol
    for name, value in layer.params.items():
        analytic = layer.grads[name].copy()
        assert max_rel_error(analytic, numerical_grad(loss, value)) <= tol, name


class TestConv1d:
    def test_identity_kernel(self):
        x = np.arange(6.0).reshape(1, 1, 6)
        out = nn.conv1d(x, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_hand_arithmetic(self):
        out = nn.conv1d(np.array([[[1.0, 2.0, 3.0]]]), np.ones((1, 1, 2)), np.zeros(1))
        np.testing.assert_array_equal(out, [[[3.0, 5.0]]])

    def test_strided_output(self):
        x = np.arange(7.0).reshape(1, 1, 7)
        out = nn.conv1d(x, np.array([[[1.0, -1.0, 2.0]]]), np.array([0.5]), stride=2)
        # windows start at 0, 2, 4
        expected = [0 - 1 + 4 + 0.5, 2 - 3 + 8 + 0.5, 4 - 5 + 12 + 0.5]
        np.testing.assert_allclose(out[0, 0], expected)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.conv1d(np.zeros((1, 2, 5)), np.zeros((1, 3, 2)), np.zeros(1))
        with pytest.raises(ValueError):
            nn.conv1d(np.zeros((1, 1, 2)), np.zeros((1, 1, 3)), np.zeros(1))

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient(self, seed, stride):
        rng = np.random.default_rng(seed)
        layer = nn.Conv1d(2, 3, 4, stride=stride, rng=rng)
        layer.params["bias"] = rng.standard_normal(3)
        _check_layer(layer, rng.standard_normal((2, 2, 16)), seed)


class TestConvTranspose:
    def test_identity_kernel(self):
        x = np.arange(5.0).reshape(1, 1, 5)
        out = nn.conv1d_transpose(x, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_output_length(self):
        out = nn.conv1d_transpose(np.zeros((2, 3, 10)), np.zeros((3, 4, 5)), np.zeros(4), stride=2)
        assert out.shape == (2, 4, (10 - 1) * 2 + 5)

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_adjoint_identity(self, seed, stride):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((2, 3, 3))  # conv1d: 3 in -> 2 out; transpose: 2 in -> 3 out
        x = rng.standard_normal((1, 3, 8))
        y_shape = nn.conv1d(x, w, np.zeros(2), stride).shape
        y = rng.standard_normal(y_shape)
        lhs = np.sum(nn.conv1d(x, w, np.zeros(2), stride) * y)
        back = nn.conv1d_transpose(y, w, np.zeros(3), stride)
        # samples past the last full window never enter conv1d, so their adjoint is zero
        back = np.pad(back, ((0, 0), (0, 0), (0, x.shape[2] - back.shape[2])))
        rhs = np.sum(x * back)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        layer = nn.ConvTranspose1d(3, 2, 5, stride=2, rng=rng)
        layer.params["bias"] = rng.standard_normal(2)
        _check_layer(layer, rng.standard_normal((2, 3, 8)), seed)


class TestMaxPool:
    def test_window_one_is_identity(self):
        x = np.array([[[3.0, -1.0, 2.0]]])
        out, idx = nn.maxpool(x, 1)
        np.testing.assert_array_equal(out, x)
        np.testing.assert_array_equal(idx, [[[0, 1, 2]]])

    def test_hand_arithmetic_and_ties(self):
        out, idx = nn.maxpool(np.array([1.0, 3.0, 2.0, 2.0]), 2)
        np.testing.assert_array_equal(out, [3.0, 2.0])
        np.testing.assert_array_equal(idx, [1, 2])

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            nn.maxpool(np.zeros(3), 4)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_backward_conserves_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 11))
        out, idx = nn.maxpool(x, 3)
        g = rng.standard_normal(out.shape)
        gx = nn.maxpool_backward(g, idx, x.shape)
        assert np.isclose(gx.sum(), g.sum(), rtol=0, atol=1e-12)
        assert np.count_nonzero(gx) == np.count_nonzero(g)
        np.testing.assert_array_equal(np.take_along_axis(gx, idx, axis=-1), g)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        # distinct, well-separated values keep the argmax stable under the FD step
        x = rng.permutation(24).astype(float).reshape(1, 2, 12) * 0.1
        _check_layer(nn.MaxPool1d(2), x, seed)


class TestDense:
    def test_identity(self):
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(nn.dense(x, np.eye(3), np.zeros(3)), x)

    def test_composition_is_product(self, rng):
        w1, w2 = rng.standard_normal((4, 3)), rng.standard_normal((2, 4))
        x = rng.standard_normal((5, 3))
        two = nn.dense(nn.dense(x, w1, np.zeros(4)), w2, np.zeros(2))
        np.testing.assert_allclose(two, nn.dense(x, w2 @ w1, np.zeros(2)), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.dense(np.zeros((1, 3)), np.zeros((2, 4)), np.zeros(2))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        layer = nn.Dense(5, 4, rng=rng)
        layer.params["bias"] = rng.standard_normal(4)
        _check_layer(layer, rng.standard_normal((3, 5)), seed)


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = rng.standard_normal(100)
        for training in (True, False):
            out, _ = nn.dropout(x, 0.0, training, rng)
            np.testing.assert_array_equal(out, x)

    def test_inference_identity(self, rng):
        x = rng.standard_normal(100)
        out, mask = nn.dropout(x, 0.7, False, rng)
        np.testing.assert_array_equal(out, x)
        assert mask is None

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            nn.dropout(np.ones(3), 1.0, True, np.random.default_rng(0))

    def test_monte_carlo_survival(self):
        x = np.ones(100_000)
        out, _ = nn.dropout(x, 0.5, True, np.random.default_rng(3))
        survivors = np.count_nonzero(out) / x.size
        assert abs(survivors - 0.5) <= 0.01
        assert abs(out.mean() - 1.0) <= 0.02
        np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient_with_fixed_mask(self, seed):
        rng = np.random.default_rng(seed)
        layer = nn.Dropout(0.3)
        x = rng.standard_normal((2, 6))

        def run():
            return layer.forward(x, training=True, rng=np.random.default_rng(seed))

        r = rng.standard_normal(x.shape)
        run()
        gx = layer.backward(r)
        numeric = numerical_grad(lambda: float(np.sum(run() * r)), x)
        assert max_rel_error(gx, numeric) <= 1e-4


class TestActivationsAndShapes:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 7))
        x[np.abs(x) < 1e-3] = 0.5  # stay clear of the kink
        _check_layer(nn.ReLU(), x, seed)

    def test_reshape_and_crop_roundtrip(self, rng):
        x = rng.standard_normal((2, 3, 5))
        r = nn.Reshape((-1,))
        flat = r.forward(x)
        assert flat.shape == (2, 15)
        np.testing.assert_array_equal(r.backward(flat), x)
        c = nn.Crop(3)
        out = c.forward(x)
        np.testing.assert_array_equal(out, x[..., :3])
        g = c.backward(np.ones_like(out))
        assert g.shape == x.shape and g[..., 3:].sum() == 0

    def test_backward_without_forward(self):
        with pytest.raises(RuntimeError):
            nn.Dense(2, 2).backward(np.zeros((1, 2)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_sequential_gradient(self, seed):
        rng = np.random.default_rng(seed)
        net = nn.Sequential([
            nn.Conv1d(1, 2, 3, rng=rng), nn.MaxPool1d(2), nn.Reshape((-1,)), nn.Dense(8, 3, rng=rng),
        ])
        x = rng.standard_normal((2, 1, 10))
        r = rng.standard_normal((2, 3))
        net.forward(x)
        gx = net.backward(r)
        numeric = numerical_grad(lambda: float(np.sum(net.forward(x) * r)), x)
        assert max_rel_error(gx, numeric) <= 1e-4

    def test_glorot_bounds(self, rng):
        w = nn.glorot_uniform(rng, (200, 300), 300, 200)
        assert np.abs(w).max() <= np.sqrt(6.0 / 500)


class TestSgd:
    def test_zero_grad_no_change(self):
        p = np.array([1.0, 2.0])
        nn.sgd_step([p], [np.zeros(2)], nn.OptimizerConfig())
        np.testing.assert_array_equal(p, [1.0, 2.0])

    def test_clipped_scalar(self):
        p = np.array([0.0])
        norm = nn.sgd_step([p], [np.array([10.0])], nn.OptimizerConfig(0.001, 1.0))
        assert norm == 10.0
        assert p[0] == pytest.approx(-0.001, abs=1e-15)

    def test_unclipped_branch_exact(self):
        p = np.zeros(2)
        g = np.array([0.3, 0.4])  # norm 0.5
        nn.sgd_step([p], [g], nn.OptimizerConfig(0.001, 1.0))
        np.testing.assert_array_equal(p, -0.001 * g)

    def test_global_norm_across_tensors(self):
        a, b = np.zeros(1), np.zeros(1)
        nn.sgd_step([a, b], [np.array([3.0]), np.array([4.0])], nn.OptimizerConfig(1.0, 1.0))
        np.testing.assert_allclose([a[0], b[0]], [-0.6, -0.8], rtol=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(FloatingPointError):
            nn.sgd_step([np.zeros(1)], [np.array([np.nan])], nn.OptimizerConfig())

    def test_defaults(self):
        cfg = nn.OptimizerConfig()
        assert (cfg.learning_rate, cfg.clip_norm) == (0.001, 1.0)


class TestSerialization:
    def test_roundtrip(self, tmp_path, rng):
        tensors = {"a.weight": rng.standard_normal((2, 3, 4)), "b": np.array([1.5]), "é": np.zeros((0, 2))}
        path = tmp_path / "w.lsnn"
        nn.save_params(path, tensors)
        back = nn.load_params(path)
        assert list(back) == list(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_byte_layout(self, tmp_path):
        path = tmp_path / "w.lsnn"
        nn.save_params(path, {"w": np.array([[1.0, 2.0]])})
        expected = (b"LSNN" + struct.pack("<I", 1) + struct.pack("<I", 1) + b"w"
                    + struct.pack("<I", 2) + struct.pack("<2I", 1, 2) + struct.pack("<2d", 1.0, 2.0))
        assert path.read_bytes() == expected

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE\x01\x00\x00\x00")
        with pytest.raises(ValueError):
            nn.load_params(path)
