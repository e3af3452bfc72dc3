"""Layer primitives built on the tensor tape.

conv2d, causal_conv3d, layer_norm, softmax and standardize are fused ops with
hand-written backward closures; attention and the projections are composed from
tensor ops.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from motionfuse.errors import ConfigError, DimensionError
from motionfuse.log import log_deb
from motionfuse.tensor import as_tensor, make_op, matmul, reshape, swapaxes, transpose


def _axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else y + b


def lora(x, a, b):
    """Low-rank delta x·A·B."""
    return matmul(matmul(x, a), b)


# ---- convolutions --------------------------------------------------------


def conv2d(x, w, b=None, stride=1, padding=0):
    """2D cross-correlation over the last three axes of x ([..., C, H, W]) with w [O, C, k, k]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim < 3 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(
            f"conv2d expects x[..., C, H, W] and w[O, C, k, k], got {x.shape}, {w.shape}"
        )
    O, C, k, _ = w.shape
    if x.shape[-3] != C:
        raise DimensionError(f"conv2d channel mismatch: x {x.shape}, w {w.shape}")
    H, W = x.shape[-2:]
    if stride == k and padding == 0 and (H % k or W % k):
        raise DimensionError(f"patch conv needs H, W divisible by {k}, got {H}x{W}")
    if k > H + 2 * padding or k > W + 2 * padding:
        Hp, Wp = H + 2 * padding, W + 2 * padding
        raise DimensionError(f"kernel {k} larger than padded input {Hp}x{Wp}")

    pad = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (padding, padding)]
    xp = np.pad(x.data, pad) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    Ho, Wo = win.shape[-4], win.shape[-3]
    out = np.moveaxis(np.tensordot(win, w.data, axes=([-5, -2, -1], [1, 2, 3])), -1, -3)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None]

    lead = x.shape[:-3]

    def backward(g):
        gb = g.reshape(-1, O, Ho, Wo)
        wb = win.reshape(-1, C, Ho, Wo, k, k)
        dw = np.tensordot(gb, wb, axes=([0, 2, 3], [0, 2, 3]))
        gw = np.tensordot(g, w.data, axes=([-3], [0]))
        dxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                patch = np.moveaxis(gw[..., i, j], -1, -3)
                rows = slice(i, i + stride * (Ho - 1) + 1, stride)
                cols = slice(j, j + stride * (Wo - 1) + 1, stride)
                dxp[..., rows, cols] += patch
        dx = dxp[..., padding : padding + H, padding : padding + W] if padding else dxp
        grads = [dx.reshape(lead + (C, H, W)), dw]
        if b is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward, "conv2d")


def causal_conv3d(x, w, b=None, stride_t=1):
    """Temporal convolution of x [C, T, H, W] with w [O, C, kt, 1, 1].

    The input is left-padded with kt-1 copies of its first frame, so output step
    tau only reads input frames at times <= tau * stride_t.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 5 or w.shape[3:] != (1, 1):
        raise DimensionError(
            f"causal_conv3d expects x[C, T, H, W] and w[O, C, kt, 1, 1], got {x.shape}, {w.shape}"
        )
    O, C, kt = w.shape[:3]
    if kt < 1:
        raise ConfigError("causal_conv3d needs a temporal kernel of at least 1")
    if x.shape[0] != C:
        raise DimensionError(f"causal_conv3d channel mismatch: x {x.shape}, w {w.shape}")
    T = x.shape[1]
    if stride_t < 1 or T % stride_t:
        raise ConfigError(f"frame count {T} is not divisible by temporal stride {stride_t}")

    xp = np.concatenate([np.repeat(x.data[:, :1], kt - 1, axis=1), x.data], axis=1)
    To = T // stride_t
    span = stride_t * (To - 1) + 1
    out = np.zeros((O, To) + x.shape[2:])
    for i in range(kt):
        out += np.tensordot(w.data[:, :, i, 0, 0], xp[:, i : i + span : stride_t], axes=([1], [0]))
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None, None]

    def backward(g):
        dw = np.zeros(w.shape)
        dxp = np.zeros(xp.shape)
        for i in range(kt):
            frames = xp[:, i : i + span : stride_t]
            dw[:, :, i, 0, 0] = np.tensordot(g, frames, axes=([1, 2, 3], [1, 2, 3]))
            wi = w.data[:, :, i, 0, 0]
            dxp[:, i : i + span : stride_t] += np.tensordot(wi, g, axes=([0], [0]))
        dx = dxp[:, kt - 1 :].copy()
        dx[:, 0] += dxp[:, : kt - 1].sum(axis=1)
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward, "causal_conv3d")


# ---- normalisation -------------------------------------------------------


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then apply gamma, beta."""
    x = as_tensor(x)
    D = x.shape[-1] if x.ndim else 0
    if D == 0:
        raise DimensionError(f"layer_norm needs a non-empty last axis, got {x.shape}")
    g_t = None if gamma is None else as_tensor(gamma)
    b_t = None if beta is None else as_tensor(beta)
    for name, p in (("gamma", g_t), ("beta", b_t)):
        if p is not None and p.shape != (D,):
            raise DimensionError(f"layer_norm {name} shape {p.shape} != ({D},)")

    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = np.ones(D) if g_t is None else g_t.data
    out = xhat * gd if g_t is not None else xhat
    if b_t is not None:
        out = out + b_t.data

    def backward(g):
        dxhat = g * gd
        proj = xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - proj)
        grads = [dx]
        if g_t is not None:
            grads.append((g * xhat).reshape(-1, D).sum(axis=0))
        if b_t is not None:
            grads.append(g.reshape(-1, D).sum(axis=0))
        return grads

    parents = tuple(p for p in (x, g_t, b_t) if p is not None)
    return make_op(out, parents, backward, "layer_norm")


def standardize(x, axis=0):
    """Zero mean, unit variance along ``axis``; constant slices map to exactly zero."""
    x = as_tensor(x)
    ax = _axis(axis, x.ndim)
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    std = np.sqrt((xc * xc).mean(axis=ax, keepdims=True))
    ok = std > 1e-12 * (1.0 + np.abs(mu))
    if not ok.all():
        log_deb(f"standardize: {int((~ok).sum())} constant slice(s) mapped to zero")
    inv = np.divide(1.0, std, out=np.zeros_like(std), where=ok)
    out = xc * inv

    def backward(g):
        proj = out * (g * out).mean(axis=ax, keepdims=True)
        return (inv * (g - g.mean(axis=ax, keepdims=True) - proj),)

    return make_op(out, (x,), backward, "standardize")


def softmax(x, axis=-1):
    x = as_tensor(x)
    ax = _axis(axis, x.ndim)
    e = np.exp(x.data - x.data.max(axis=ax, keepdims=True))
    out = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return make_op(out, (x,), backward, "softmax")


# ---- attention -----------------------------------------------------------


def attention(q, k, v):
    """softmax(q·kᵀ/√D)·v over the last two axes; leading axes are batch (heads)."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1), v)


def split_heads(x, heads):
    L, D = x.shape
    if D % heads:
        raise ConfigError(f"width {D} is not divisible by {heads} heads")
    return transpose(reshape(x, (L, heads, D // heads)), (1, 0, 2))


def merge_heads(x):
    h, L, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (L, h * dh))


def multi_head_attention(xq, xkv, p, prefix, heads):
    """Project queries from xq and keys/values from xkv, attend per head, project out.

    Expects ``{prefix}wq, wk, wv, wo`` and ``{prefix}bq, bk, bv`` in the mapping p.
    """
    D = xq.shape[-1]
    if xkv.shape[-1] != D:
        raise ConfigError(f"query width {D} != key/value width {xkv.shape[-1]}")
    if D % heads:
        raise ConfigError(f"width {D} is not divisible by {heads} heads")
    q = split_heads(linear(xq, p[prefix + "wq"], p[prefix + "bq"]), heads)
    k = split_heads(linear(xkv, p[prefix + "wk"], p[prefix + "bk"]), heads)
    v = split_heads(linear(xkv, p[prefix + "wv"], p[prefix + "bv"]), heads)
    return matmul(merge_heads(attention(q, k, v)), p[prefix + "wo"])
