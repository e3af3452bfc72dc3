"""Unit tests for motionfuse.tensor: tape construction and backward."""

import sys
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from motionfuse.errors import DimensionError, NonFiniteError
from motionfuse.tensor import (
    Tensor,
    concat,
    exp,
    log,
    matmul,
    no_grad,
    reduce_mean,
    reduce_sum,
    reshape,
    tanh,
)

# ---------------------------------------------------------------------------
# Tests: elementwise ops and broadcasting
# ---------------------------------------------------------------------------


class TestElementwise(unittest.TestCase):
    def test_mul_add_gradients(self):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        b = Tensor([4.0, 5.0, 6.0], requires_grad=True)
        reduce_sum(a * b + a).backward()
        assert_allclose(a.grad, [5.0, 6.0, 7.0])
        assert_allclose(b.grad, [1.0, 2.0, 3.0])

    def test_broadcast_gradient_is_summed(self):
        x = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.zeros(4), requires_grad=True)
        reduce_sum(x + b).backward()
        assert_allclose(b.grad, np.full(4, 3.0))

    def test_div_and_power(self):
        a = Tensor(2.0, requires_grad=True)
        b = Tensor(4.0, requires_grad=True)
        (a / b + a**3).backward()
        self.assertAlmostEqual(float(a.grad), 0.25 + 12.0)
        self.assertAlmostEqual(float(b.grad), -2.0 / 16.0)

    def test_exp_log_tanh(self):
        x = Tensor(0.5, requires_grad=True)
        (exp(x) + log(x) + tanh(x)).backward()
        expected = np.exp(0.5) + 2.0 + (1.0 - np.tanh(0.5) ** 2)
        self.assertAlmostEqual(float(x.grad), expected, places=12)

    def test_rsub_and_neg(self):
        x = Tensor(3.0, requires_grad=True)
        (1.0 - x - (-x) * 2.0).backward()
        self.assertAlmostEqual(float(x.grad), 1.0)

    def test_reused_node_accumulates(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x
        (y + y).backward()
        self.assertAlmostEqual(float(x.grad), 12.0)


# ---------------------------------------------------------------------------
# Tests: shape ops
# ---------------------------------------------------------------------------


class TestShapeOps(unittest.TestCase):
    def test_reshape_transpose_roundtrip_gradient(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        w = np.arange(6.0).reshape(3, 2)
        reduce_sum(x.T * w).backward()
        assert_allclose(x.grad, w.T)

    def test_reshape_mismatch(self):
        with self.assertRaises(DimensionError):
            reshape(Tensor(np.ones(6)), (4, 2))

    def test_index_gradient_scatters(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        reduce_sum(x[1:3]).backward()
        assert_allclose(x.grad, [0.0, 1.0, 1.0, 0.0, 0.0])

    def test_concat_splits_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 2)), requires_grad=True)
        out = concat([a, b], axis=0)
        self.assertEqual(out.shape, (3, 2))
        reduce_sum(out * np.arange(6.0).reshape(3, 2)).backward()
        assert_allclose(a.grad, [[0.0, 1.0], [2.0, 3.0]])
        assert_allclose(b.grad, [[4.0, 5.0]])

    def test_mean_axis(self):
        x = Tensor(np.ones((2, 4)), requires_grad=True)
        reduce_sum(reduce_mean(x, axis=1)).backward()
        assert_allclose(x.grad, np.full((2, 4), 0.25))


# ---------------------------------------------------------------------------
# Tests: matmul
# ---------------------------------------------------------------------------


class TestMatmul(unittest.TestCase):
    def test_gradients(self):
        rng = np.random.default_rng(0)
        a_np, b_np = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        a, b = Tensor(a_np, requires_grad=True), Tensor(b_np, requires_grad=True)
        reduce_sum(matmul(a, b)).backward()
        assert_allclose(a.grad, np.ones((3, 2)) @ b_np.T)
        assert_allclose(b.grad, a_np.T @ np.ones((3, 2)))

    def test_batched_left_operand(self):
        a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        b = Tensor(np.ones((4, 5)), requires_grad=True)
        out = matmul(a, b)
        self.assertEqual(out.shape, (2, 3, 5))
        reduce_sum(out).backward()
        assert_allclose(b.grad, np.full((4, 5), 6.0))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------------------
# Tests: tape control
# ---------------------------------------------------------------------------


class TestTape(unittest.TestCase):
    def test_no_grad_records_nothing(self):
        x = Tensor(2.0, requires_grad=True)
        with no_grad():
            y = x * x
        self.assertFalse(y.requires_grad)

    def test_frozen_leaf_gets_no_grad(self):
        x = Tensor(2.0, requires_grad=True)
        c = Tensor(5.0)
        (x * c).backward()
        self.assertIsNone(c.grad)
        self.assertAlmostEqual(float(x.grad), 5.0)

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(DimensionError):
            (x * 2.0).backward()

    def test_explicit_seed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        (x * 2.0).backward(np.array([1.0, 0.0, 2.0]))
        assert_allclose(x.grad, [2.0, 0.0, 4.0])

    def test_non_finite_forward_raises(self):
        with self.assertRaises(NonFiniteError):
            log(Tensor(0.0))
        with self.assertRaises(NonFiniteError):
            Tensor([np.nan])

    def test_item_needs_one_element(self):
        self.assertEqual(Tensor([[4.0]]).item(), 4.0)
        with self.assertRaises(DimensionError):
            Tensor([1.0, 2.0]).item()


if __name__ == "__main__":
    unittest.main()
