"""Unit tests for motionfuse.layers."""

import sys
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
from numpy.testing import assert_allclose

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from motionfuse.errors import ConfigError, DimensionError
from motionfuse.layers import (
    attention,
    causal_conv3d,
    conv2d,
    layer_norm,
    merge_heads,
    multi_head_attention,
    softmax,
    split_heads,
    standardize,
)
from motionfuse.tensor import Tensor, reduce_sum


def _naive_conv2d(x, w, b, stride, padding):
    C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = (patch * w[o]).sum() + b[o]
    return out


# ---------------------------------------------------------------------------
# Tests: convolutions
# ---------------------------------------------------------------------------


class TestConv2d(unittest.TestCase):
    def test_matches_naive(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        assert_allclose(out.data, _naive_conv2d(x, w, b, 2, 1), atol=1e-12)

    def test_leading_axes_are_batch(self):
        rng = np.random.default_rng(2)
        x, w = rng.standard_normal((4, 2, 4, 4)), rng.standard_normal((3, 2, 2, 2))
        out = conv2d(Tensor(x), Tensor(w), stride=2)
        self.assertEqual(out.shape, (4, 3, 2, 2))
        assert_allclose(out.data[1], _naive_conv2d(x[1], w, np.zeros(3), 2, 0), atol=1e-12)

    def test_patch_conv_needs_divisible_input(self):
        with self.assertRaises(DimensionError):
            conv2d(Tensor(np.ones((1, 5, 4))), Tensor(np.ones((1, 1, 2, 2))), stride=2)

    def test_bias_gradient(self):
        x = Tensor(np.ones((1, 4, 4)))
        w = Tensor(np.ones((2, 1, 2, 2)))
        b = Tensor(np.zeros(2), requires_grad=True)
        reduce_sum(conv2d(x, w, b, stride=2)).backward()
        assert_allclose(b.grad, [4.0, 4.0])


class TestCausalConv3d(unittest.TestCase):
    def test_output_frames_and_shape(self):
        x = np.random.default_rng(3).standard_normal((2, 8, 2, 2))
        w = np.random.default_rng(4).standard_normal((3, 2, 3, 1, 1))
        out = causal_conv3d(Tensor(x), Tensor(w), stride_t=2)
        self.assertEqual(out.shape, (3, 4, 2, 2))

    def test_frame_perturbation_leaves_earlier_steps_unchanged(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 8, 2, 2))
        w = Tensor(rng.standard_normal((3, 2, 3, 1, 1)))
        base = causal_conv3d(Tensor(x), w, stride_t=2).data
        for t in range(8):
            y = x.copy()
            y[:, t] += 1.0
            out = causal_conv3d(Tensor(y), w, stride_t=2).data
            for tau in range(4):
                if tau < t / 2:
                    self.assertTrue(np.array_equal(out[:, tau], base[:, tau]), (t, tau))

    def test_first_frame_replicated(self):
        x = np.zeros((1, 2, 1, 1))
        x[0, 0] = 2.0
        w = np.ones((1, 1, 3, 1, 1))
        out = causal_conv3d(Tensor(x), Tensor(w)).data
        # step 0 reads [x0, x0, x0], step 1 reads [x0, x0, x1]
        assert_allclose(out[0, :, 0, 0], [6.0, 4.0])

    def test_stride_must_divide_frames(self):
        with self.assertRaises(ConfigError):
            x, w = np.ones((1, 5, 1, 1)), np.ones((1, 1, 3, 1, 1))
            causal_conv3d(Tensor(x), Tensor(w), stride_t=2)


# ---------------------------------------------------------------------------
# Tests: normalisation and softmax
# ---------------------------------------------------------------------------


class TestNormalisation(unittest.TestCase):
    def test_layer_norm_moments(self):
        x = np.random.default_rng(6).standard_normal((4, 6)) * 3.0 + 1.0
        out = layer_norm(Tensor(x)).data
        assert_allclose(out.mean(axis=-1), np.zeros(4), atol=1e-12)
        assert_allclose(out.var(axis=-1), np.ones(4), atol=1e-4)

    def test_layer_norm_affine(self):
        x = Tensor(np.array([[1.0, 3.0]]))
        out = layer_norm(x, np.array([2.0, 2.0]), np.array([1.0, 1.0]), eps=0.0).data
        assert_allclose(out, [[-1.0, 3.0]])

    def test_layer_norm_gamma_shape(self):
        with self.assertRaises(DimensionError):
            layer_norm(Tensor(np.ones((2, 3))), np.ones(4))

    def test_standardize_axis0(self):
        x = np.random.default_rng(7).standard_normal((5, 3))
        out = standardize(Tensor(x), axis=0).data
        assert_allclose(out.mean(axis=0), np.zeros(3), atol=1e-12)
        assert_allclose(out.std(axis=0), np.ones(3), atol=1e-12)

    @patch("motionfuse.layers.log_deb")
    def test_standardize_constant_column_is_zero(self, mock_deb):
        x = np.array([[1.0, 2.0], [1.0, 4.0], [1.0, 6.0]])
        t = Tensor(x, requires_grad=True)
        out = standardize(t, axis=0)
        assert_allclose(out.data[:, 0], np.zeros(3))
        reduce_sum(out * np.arange(6.0).reshape(3, 2)).backward()
        assert_allclose(t.grad[:, 0], np.zeros(3))
        mock_deb.assert_called_once()

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(8).standard_normal((3, 7)) * 50.0
        out = softmax(Tensor(x), axis=-1).data
        assert_allclose(out.sum(axis=-1), np.ones(3), atol=1e-12)
        self.assertTrue((out >= 0).all())

    def test_softmax_large_logit_does_not_overflow(self):
        with np.errstate(over="raise", invalid="raise"):
            out = softmax(Tensor(np.array([1000.0, 0.0]))).data
        assert_allclose(out, [1.0, 0.0], atol=1e-15)

    def test_layer_norm_constant_row_is_zero(self):
        out = layer_norm(Tensor(np.full((2, 5), 3.0))).data
        self.assertTrue(np.array_equal(out, np.zeros((2, 5))))

    def test_layer_norm_symmetric_pair(self):
        out = layer_norm(Tensor(np.array([1.0, -1.0]))).data
        assert_allclose(out, [1.0, -1.0], atol=1e-5)


# ---------------------------------------------------------------------------
# Tests: attention
# ---------------------------------------------------------------------------


class TestAttention(unittest.TestCase):
    def test_uniform_scores_average_values(self):
        q = Tensor(np.zeros((1, 2, 4)))
        k = Tensor(np.random.default_rng(9).standard_normal((1, 3, 4)) * 0.0)
        v = Tensor(np.arange(12.0).reshape(1, 3, 4))
        out = attention(q, k, v).data
        assert_allclose(out[0, 0], v.data[0].mean(axis=0))

    def test_single_key_broadcasts_its_value(self):
        rng = np.random.default_rng(11)
        q = Tensor(rng.standard_normal((2, 3, 4)) * 5.0)
        k, v = Tensor(rng.standard_normal((2, 1, 4))), Tensor(rng.standard_normal((2, 1, 4)))
        out = attention(q, k, v).data
        assert_allclose(out, np.broadcast_to(v.data, (2, 3, 4)))

    def test_dominant_key_selects_its_value(self):
        q = Tensor(np.array([[1.0, 0.0, 0.0, 0.0]]))
        k = Tensor(np.array([[0.0, 1.0, 0.0, 0.0], [100.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]))
        v = Tensor(np.arange(12.0).reshape(3, 4))
        out = attention(q, k, v).data
        assert_allclose(out[0], v.data[1], atol=1e-12)

    def test_split_merge_inverse(self):
        x = Tensor(np.arange(24.0).reshape(4, 6))
        h = split_heads(x, 3)
        self.assertEqual(h.shape, (3, 4, 2))
        assert_allclose(merge_heads(h).data, x.data)

    def test_heads_must_divide_width(self):
        with self.assertRaises(ConfigError):
            split_heads(Tensor(np.ones((2, 5))), 2)

    def test_multi_head_shapes(self):
        rng = np.random.default_rng(10)
        D = 6
        p = {f"a.{n}": Tensor(rng.standard_normal((D, D))) for n in ("wq", "wk", "wv", "wo")}
        p.update({f"a.{n}": Tensor(np.zeros(D)) for n in ("bq", "bk", "bv")})
        xq, xkv = rng.standard_normal((4, D)), rng.standard_normal((7, D))
        out = multi_head_attention(Tensor(xq), Tensor(xkv), p, "a.", 2)
        self.assertEqual(out.shape, (4, D))

    def test_multi_head_width_mismatch(self):
        with self.assertRaises(ConfigError):
            multi_head_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 6))), {}, "a.", 2)


if __name__ == "__main__":
    unittest.main()
