"""Unit tests for motionfuse.patchify: motion encoders and token layout."""

import sys
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from motionfuse.errors import ConfigError
from motionfuse.params import Params
from motionfuse.patchify import (
    controlnet_style_encode,
    encode_motion,
    init_encoder,
    patches,
    patchify_motion,
    token_grid,
    unpatch,
)
from motionfuse.tensor import Tensor


def _encoder(encoder="patchify", channels=6, dim=12, p=4, q=2, seed=0):
    params = Params()
    init_encoder(params, seed, "enc.", channels, dim, p, q, encoder)
    return params


def _zero(params):
    for name in params:
        params[name].data = np.zeros(params[name].shape)
    return params


# ---------------------------------------------------------------------------
# Tests: token grid and patch layout
# ---------------------------------------------------------------------------


class TestTokenGrid(unittest.TestCase):
    def test_count(self):
        self.assertEqual(token_grid(8, 32, 32, 4, 2), (4, 8, 8))

    def test_names_offending_dimension(self):
        with self.assertRaises(ConfigError) as ctx:
            token_grid(8, 30, 32, 4, 2)
        self.assertIn("H=30", str(ctx.exception))
        with self.assertRaises(ConfigError) as ctx:
            token_grid(7, 32, 32, 4, 2)
        self.assertIn("T=7", str(ctx.exception))

    def test_patches_unpatch_inverse(self):
        x = np.random.default_rng(0).standard_normal((3, 4, 8, 8))
        tok = patches(Tensor(x), 4, 2)
        self.assertEqual(tok.shape, (2 * 2 * 2, 3 * 2 * 4 * 4))
        assert_allclose(unpatch(tok, x.shape, 4, 2).data, x)

    def test_patch_order_is_time_major(self):
        x = np.zeros((1, 4, 4, 4))
        x[0, 2:, 0:2, 2:4] = 1.0
        tok = patches(Tensor(x), 2, 2).data
        # grid (2, 2, 2): time slice 1, row 0, column 1 -> index 1*4 + 0*2 + 1
        self.assertEqual(list(np.flatnonzero(tok.sum(axis=1))), [5])


# ---------------------------------------------------------------------------
# Tests: patchify stack
# ---------------------------------------------------------------------------


class TestPatchifyMotion(unittest.TestCase):
    def test_token_count(self):
        x = np.random.default_rng(1).standard_normal((6, 8, 32, 32))
        out = patchify_motion(Tensor(x), _encoder(), "enc.", 4, 2)
        self.assertEqual(out.tokens.shape, (256, 12))
        self.assertEqual(out.grid, (4, 8, 8))
        self.assertEqual(out.count, 256)

    def test_zero_input_zero_bias(self):
        out = patchify_motion(Tensor(np.zeros((6, 8, 8, 8))), _encoder(), "enc.", 4, 2)
        self.assertFalse(out.tokens.data.any())

    def test_later_frames_do_not_reach_earlier_slices(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 8, 8, 8))
        params = _encoder()
        base = patchify_motion(Tensor(x), params, "enc.", 4, 2).tokens.data
        per_slice = 2 * 2

        y = x.copy()
        y[:, 7] += 1.0
        out = patchify_motion(Tensor(y), params, "enc.", 4, 2).tokens.data
        self.assertTrue(np.array_equal(out[:per_slice], base[:per_slice]))

        y = x.copy()
        y[:, 6] += 1.0
        out = patchify_motion(Tensor(y), params, "enc.", 4, 2).tokens.data
        self.assertTrue(np.array_equal(out[: 3 * per_slice], base[: 3 * per_slice]))
        self.assertFalse(np.array_equal(out[3 * per_slice :], base[3 * per_slice :]))

    def test_divisibility(self):
        with self.assertRaises(ConfigError):
            patchify_motion(Tensor(np.zeros((6, 8, 10, 8))), _encoder(), "enc.", 4, 2)

    def test_gradients_reach_every_parameter(self):
        params = _encoder()
        x = np.random.default_rng(3).standard_normal((6, 4, 8, 8))
        patchify_motion(Tensor(x), params, "enc.", 4, 2).tokens.sum().backward()
        for name in params:
            self.assertIsNotNone(params[name].grad, name)


# ---------------------------------------------------------------------------
# Tests: ControlNet-style encoder
# ---------------------------------------------------------------------------


class TestControlNetEncoder(unittest.TestCase):
    def test_same_token_count(self):
        x = Tensor(np.random.default_rng(4).standard_normal((6, 4, 8, 8)))
        a = patchify_motion(x, _encoder(), "enc.", 4, 2)
        b = controlnet_style_encode(x, _encoder("controlnet"), "enc.", 4, 2)
        self.assertEqual(a.tokens.shape, b.tokens.shape)
        self.assertEqual(a.grid, b.grid)

    def test_zero_params_zero_tokens(self):
        x = Tensor(np.zeros((6, 4, 8, 8)))
        out = controlnet_style_encode(x, _zero(_encoder("controlnet")), "enc.", 4, 2)
        self.assertFalse(out.tokens.data.any())

    def test_larger_parameter_footprint(self):
        # D >= C·p² for C=6, p=2
        for dim in (24, 48):
            small = _encoder("patchify", dim=dim, p=2).count()
            large = _encoder("controlnet", dim=dim, p=2).count()
            self.assertGreater(large, small)

    def test_dispatch(self):
        x = Tensor(np.zeros((6, 4, 8, 8)))
        tokens = encode_motion(x, _encoder("controlnet"), "enc.", 4, 2, "controlnet")
        self.assertEqual(tokens.count, 8)
        with self.assertRaises(ConfigError):
            encode_motion(x, _encoder(), "enc.", 4, 2, "unet")


if __name__ == "__main__":
    unittest.main()
