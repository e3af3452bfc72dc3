"""Motion encoders: turn a C x T x H x W raster into L = (T/q)(H/p)(W/p) tokens of width D.

Tokens are flattened time-major, then row-major over space, the same order the
visual patch embedder uses.
"""

from dataclasses import dataclass

import numpy as np

from motionfuse.errors import ConfigError
from motionfuse.layers import causal_conv3d, conv2d, linear
from motionfuse.params import normal
from motionfuse.tensor import as_tensor, reshape, silu, transpose

ENCODERS = ("patchify", "controlnet")


@dataclass
class MotionTokens:
    tokens: object
    grid: tuple

    @property
    def count(self):
        return self.tokens.shape[0]


def token_grid(T, H, W, p, q):
    """(T/q, H/p, W/p), raising a ConfigError that names the first offending dimension."""
    for name, n, k in (("T", T, q), ("H", H, p), ("W", W, p)):
        if k < 1:
            raise ConfigError(f"compression factor for {name} must be >= 1, got {k}")
        if n % k:
            raise ConfigError(f"{name}={n} is not divisible by {'q' if name == 'T' else 'p'}={k}")
    return T // q, H // p, W // p


def patches(x, p, q):
    """C x T x H x W -> L x (C·q·p·p) non-overlapping space-time patches."""
    x = as_tensor(x)
    C, T, H, W = x.shape
    Tq, Hp, Wp = token_grid(T, H, W, p, q)
    x = reshape(x, (C, Tq, q, Hp, p, Wp, p))
    x = transpose(x, (1, 3, 5, 0, 2, 4, 6))
    return reshape(x, (Tq * Hp * Wp, C * q * p * p))


def unpatch(tokens, shape, p, q):
    """Inverse of ``patches``."""
    C, T, H, W = shape
    Tq, Hp, Wp = token_grid(T, H, W, p, q)
    x = reshape(tokens, (Tq, Hp, Wp, C, q, p, p))
    x = transpose(x, (3, 0, 4, 1, 5, 2, 6))
    return reshape(x, (C, T, H, W))


def patchify_motion(x, params, prefix, p, q):
    """Per-frame p x p conv to width D, SiLU, causal temporal conv, flatten.

    The temporal conv has kernel q + 1 and stride q.
    """
    x = as_tensor(x)
    C, T, H, W = x.shape
    grid = token_grid(T, H, W, p, q)
    per_frame = transpose(x, (1, 0, 2, 3))
    frames = conv2d(per_frame, params[prefix + "conv_w"], params[prefix + "conv_b"], stride=p)
    h = silu(transpose(frames, (1, 0, 2, 3)))
    h = causal_conv3d(h, params[prefix + "tconv_w"], params[prefix + "tconv_b"], stride_t=q)
    D = h.shape[0]
    tokens = reshape(transpose(h, (1, 2, 3, 0)), (grid[0] * grid[1] * grid[2], D))
    return MotionTokens(tokens, grid)


def controlnet_style_encode(x, params, prefix, p, q):
    """Full-width patch embedding followed by a per-token MLP and an output projection."""
    x = as_tensor(x)
    grid = token_grid(*x.shape[1:], p, q)
    h = linear(patches(x, p, q), params[prefix + "embed_w"], params[prefix + "embed_b"])
    h = silu(linear(h, params[prefix + "mlp_w1"], params[prefix + "mlp_b1"]))
    h = linear(h, params[prefix + "mlp_w2"], params[prefix + "mlp_b2"])
    return MotionTokens(linear(h, params[prefix + "out_w"], params[prefix + "out_b"]), grid)


def encode_motion(x, params, prefix, p, q, encoder="patchify"):
    if encoder == "patchify":
        return patchify_motion(x, params, prefix, p, q)
    if encoder == "controlnet":
        return controlnet_style_encode(x, params, prefix, p, q)
    raise ConfigError(f"unknown encoder {encoder!r}")


# ---- initialisation ------------------------------------------------------


def init_encoder(params, seed, prefix, channels, dim, p, q, encoder="patchify"):
    if encoder == "patchify":
        params.add(
            prefix + "conv_w",
            normal(seed, prefix + "conv_w", (dim, channels, p, p), 1.0 / np.sqrt(channels * p * p)),
            "encoder",
        )
        params.add(prefix + "conv_b", np.zeros(dim), "encoder")
        params.add(
            prefix + "tconv_w",
            normal(seed, prefix + "tconv_w", (dim, dim, q + 1, 1, 1), 1.0 / np.sqrt(dim * (q + 1))),
            "encoder",
        )
        params.add(prefix + "tconv_b", np.zeros(dim), "encoder")
        return
    if encoder != "controlnet":
        raise ConfigError(f"unknown encoder {encoder!r}")

    n_in = channels * q * p * p
    shapes = (
        ("embed_w", (n_in, dim)),
        ("mlp_w1", (dim, 4 * dim)),
        ("mlp_w2", (4 * dim, dim)),
        ("out_w", (dim, dim)),
    )
    for name, shape in shapes:
        w = normal(seed, prefix + name, shape, 1.0 / np.sqrt(shape[0]))
        params.add(prefix + name, w, "encoder")
    for name, n in (("embed_b", dim), ("mlp_b1", 4 * dim), ("mlp_b2", dim), ("out_b", dim)):
        params.add(prefix + name, np.zeros(n), "encoder")
