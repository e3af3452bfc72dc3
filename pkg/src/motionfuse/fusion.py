"""Decouple-and-fuse: per-block motion self-attention, mask logits with a human-region
prior, per-token two-way softmax fusion, and cross-attention + LoRA injection."""

import numpy as np

from motionfuse.errors import ConfigError
from motionfuse.layers import layer_norm, linear, lora, multi_head_attention, softmax, standardize
from motionfuse.params import normal
from motionfuse.tensor import as_tensor, concat

FUSE_MODES = ("softmax", "add")
STREAMS = ("pose", "cam")


def _check_width(a, b, what):
    if a.shape[-1] != b.shape[-1]:
        raise ConfigError(f"{what}: width {a.shape[-1]} != {b.shape[-1]}")


def motion_self_attention(z, params, prefix, heads):
    """Pre-norm multi-head self-attention with a residual connection."""
    z = as_tensor(z)
    width = params[prefix + "wq"].shape[0]
    if width != z.shape[-1]:
        raise ConfigError(f"motion tokens have width {z.shape[-1]}, parameters expect {width}")
    h = layer_norm(z, params[prefix + "ln_g"], params[prefix + "ln_b"])
    return z + multi_head_attention(h, h, params, prefix, heads)


def compute_mask_logits(z_pose, z_cam, prior, params, prefix):
    """Per-token scalar logits for each stream, standardised over tokens.

    ``prior`` is the flattened {0, 1} human-region mask (length L) and is added to
    the pose logits only.
    """
    z_pose, z_cam = as_tensor(z_pose), as_tensor(z_cam)
    L = z_pose.shape[0]
    if z_cam.shape[0] != L:
        raise ConfigError(f"pose stream has {L} tokens, camera stream has {z_cam.shape[0]}")
    m_pose = linear(z_pose, params[prefix + "mask_pose_w"], params[prefix + "mask_pose_b"])
    m_cam = linear(z_cam, params[prefix + "mask_cam_w"], params[prefix + "mask_cam_b"])
    m_pose, m_cam = standardize(m_pose, axis=0), standardize(m_cam, axis=0)
    if prior is not None:
        prior = np.asarray(prior, dtype=np.float64).reshape(-1)
        if prior.size != L:
            raise ConfigError(f"prior mask covers {prior.size} cells, token grid has {L}")
        m_pose = m_pose + prior[:, None]
    return m_pose, m_cam


def fusion_weights(m_pose, m_cam):
    """L x 2 stream weights: softmax over (pose, camera) at every token."""
    return softmax(concat([m_pose, m_cam], axis=1), axis=1)


def fuse_tokens(z_pose, z_cam, m_pose, m_cam):
    z_pose, z_cam = as_tensor(z_pose), as_tensor(z_cam)
    if z_pose.shape != z_cam.shape:
        raise ConfigError(f"cannot fuse streams of shapes {z_pose.shape} and {z_cam.shape}")
    w = fusion_weights(m_pose, m_cam)
    return w[:, 0:1] * z_pose + w[:, 1:2] * z_cam


def fuse_by_addition(z_pose, z_cam):
    z_pose, z_cam = as_tensor(z_pose), as_tensor(z_cam)
    if z_pose.shape != z_cam.shape:
        raise ConfigError(f"cannot add streams of shapes {z_pose.shape} and {z_cam.shape}")
    return z_pose + z_cam


def inject(z_visual, z_fused, params, prefix, heads):
    """z_visual + LoRA(W_O · CrossAttn(Q = visual, K = V = fused))."""
    z_visual, z_fused = as_tensor(z_visual), as_tensor(z_fused)
    _check_width(z_visual, z_fused, "inject")
    q = layer_norm(z_visual, params[prefix + "ln_g"], params[prefix + "ln_b"])
    attn = multi_head_attention(q, z_fused, params, prefix, heads)
    return z_visual + lora(attn, params[prefix + "lora_a"], params[prefix + "lora_b"])


def fusion_block(z_visual, z_pose, z_cam, prior, params, n, heads, fuse_mode="softmax"):
    """One decouple-and-fuse step for backbone block n.

    Returns the updated visual tokens and the two motion streams, which carry on
    into block n + 1.
    """
    prefix = f"fuse.{n}."
    z_pose = motion_self_attention(z_pose, params, prefix + "sa_pose.", heads)
    z_cam = motion_self_attention(z_cam, params, prefix + "sa_cam.", heads)
    if fuse_mode == "softmax":
        m_pose, m_cam = compute_mask_logits(z_pose, z_cam, prior, params, prefix)
        fused = fuse_tokens(z_pose, z_cam, m_pose, m_cam)
    elif fuse_mode == "add":
        fused = fuse_by_addition(z_pose, z_cam)
    else:
        raise ConfigError(f"unknown fuse_mode {fuse_mode!r}")
    return inject(z_visual, fused, params, prefix + "ca.", heads), z_pose, z_cam


# ---- initialisation ------------------------------------------------------


def init_attention(params, seed, prefix, dim, role, layer_norm_params=True):
    std = 1.0 / np.sqrt(dim)
    for name in ("wq", "wk", "wv", "wo"):
        params.add(prefix + name, normal(seed, prefix + name, (dim, dim), std), role)
    for name in ("bq", "bk", "bv"):
        params.add(prefix + name, np.zeros(dim), role)
    if layer_norm_params:
        params.add(prefix + "ln_g", np.ones(dim), role)
        params.add(prefix + "ln_b", np.zeros(dim), role)


def init_fusion_block(params, seed, n, dim, lora_rank):
    if not 1 <= lora_rank < dim:
        raise ConfigError(f"lora_rank must satisfy 1 <= r < {dim}, got {lora_rank}")
    prefix = f"fuse.{n}."
    for stream_name in STREAMS:
        init_attention(params, seed, f"{prefix}sa_{stream_name}.", dim, "fusion")
        w = prefix + f"mask_{stream_name}_w"
        params.add(w, normal(seed, w, (dim, 1), 1.0 / np.sqrt(dim)), "fusion")
        params.add(prefix + f"mask_{stream_name}_b", np.zeros(1), "fusion")
    init_attention(params, seed, prefix + "ca.", dim, "fusion")
    a = prefix + "ca.lora_a"
    params.add(a, normal(seed, a, (dim, lora_rank), 1.0 / np.sqrt(dim)), "fusion")
    params.add(prefix + "ca.lora_b", np.zeros((lora_rank, dim)), "fusion")
