"""Toy DiT video denoiser F_θ with the motion-control branch interleaved per block.

Video enters as a C x T x H x W latent, is cut into q x p x p patches, embedded
to width D and processed by N adaLN-Zero blocks of joint [prompt; visual]
attention. After block n the fusion module injects block n's fused motion tokens.
"""

import math
import zlib
from dataclasses import dataclass, replace

import numpy as np

from motionfuse.camera import plucker_map
from motionfuse.errors import ConfigError
from motionfuse.fusion import FUSE_MODES, fusion_block, init_attention, init_fusion_block
from motionfuse.layers import layer_norm, linear, multi_head_attention
from motionfuse.params import Params, normal, orthogonal
from motionfuse.patchify import ENCODERS, encode_motion, init_encoder, patches, token_grid, unpatch
from motionfuse.pose import prior_mask, rasterize
from motionfuse.tensor import as_tensor, concat, gelu, matmul, silu

POSE_CHANNELS = 3
PLUCKER_CHANNELS = 6


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 3
    frames: int = 8
    height: int = 32
    width: int = 32
    dim: int = 96
    blocks: int = 4
    heads: int = 4
    p: int = 4
    q: int = 2
    lora_rank: int = 4
    prompt_len: int = 8
    vocab: int = 256
    fuse_mode: str = "softmax"
    use_prior: bool = True
    encoder: str = "patchify"
    ray_convention: str = "offset"
    dilate_radius: int = 2

    def validate(self):
        sizes = ("channels", "frames", "height", "width", "dim", "blocks", "heads", "prompt_len")
        for name in sizes + ("vocab",):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        token_grid(self.frames, self.height, self.width, self.p, self.q)
        if self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if self.dim % 6:
            raise ConfigError(
                f"dim={self.dim} must be divisible by 6 for the 3D positional encoding"
            )
        if not 1 <= self.lora_rank < self.dim:
            raise ConfigError(f"lora_rank must satisfy 1 <= r < dim, got {self.lora_rank}")
        if self.fuse_mode not in FUSE_MODES:
            raise ConfigError(f"fuse_mode must be one of {FUSE_MODES}, got {self.fuse_mode!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.ray_convention not in ("offset", "classic"):
            raise ConfigError(
                f"ray_convention must be offset or classic, got {self.ray_convention!r}"
            )
        if self.dilate_radius < 0:
            raise ConfigError("dilate_radius must be >= 0")
        return self

    @property
    def grid(self):
        return token_grid(self.frames, self.height, self.width, self.p, self.q)

    @property
    def tokens(self):
        t, h, w = self.grid
        return t * h * w

    @property
    def patch_size(self):
        return self.channels * self.q * self.p * self.p

    @property
    def video_shape(self):
        return (self.channels, self.frames, self.height, self.width)


# ---- conditions ----------------------------------------------------------


@dataclass(eq=False)
class Conditions:
    """Prompt text, Plücker map 6xTxHxW, pose raster 3xTxHxW and prior 1xT'xH'xW'."""

    prompt: str
    plucker: np.ndarray
    pose: np.ndarray
    prior: np.ndarray

    @classmethod
    def null(cls, cfg):
        T, H, W = cfg.frames, cfg.height, cfg.width
        return cls(
            "",
            np.zeros((PLUCKER_CHANNELS, T, H, W)),
            np.zeros((POSE_CHANNELS, T, H, W)),
            np.zeros((1,) + cfg.grid),
        )

    def without(self, prompt=False, camera=False, pose=False):
        """Replace the selected groups by their null form; a blank pose also blanks the prior."""
        out = self
        if prompt:
            out = replace(out, prompt="")
        if camera:
            out = replace(out, plucker=np.zeros_like(self.plucker))
        if pose:
            out = replace(out, pose=np.zeros_like(self.pose), prior=np.zeros_like(self.prior))
        return out


def make_conditions(cfg, prompt, trajectory, skeletons):
    """Build conditions from a camera trajectory (None = blank) and per-frame skeletons."""
    T, H, W = cfg.frames, cfg.height, cfg.width
    if trajectory is None:
        plucker = np.zeros((PLUCKER_CHANNELS, T, H, W))
    else:
        if len(trajectory) != T:
            raise ConfigError(f"trajectory has {len(trajectory)} frames, model expects {T}")
        plucker = plucker_map(trajectory, H, W, cfg.ray_convention)
    if len(skeletons) != T:
        raise ConfigError(f"skeleton sequence has {len(skeletons)} frames, model expects {T}")
    raster = rasterize(skeletons, H, W)
    return Conditions(prompt, plucker, raster, prior_mask(raster, cfg.grid, cfg.dilate_radius))


# ---- embeddings ----------------------------------------------------------


def positional_encoding(grid, dim):
    """Factorised 3D sin/cos encoding: dim/3 channels per axis (t, h, w), L x dim."""
    if dim % 6:
        raise ConfigError(f"positional encoding needs dim divisible by 6, got {dim}")
    per_axis = dim // 3
    freqs = 1.0 / (10000.0 ** (np.arange(per_axis // 2) / (per_axis // 2)))
    mesh = np.meshgrid(*(np.arange(n) for n in grid), indexing="ij")
    coords = np.stack(mesh, axis=-1).reshape(-1, 3)
    parts = []
    for axis in range(3):
        ang = coords[:, axis : axis + 1] * freqs[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    return np.concatenate(parts, axis=1)


def prompt_matrix(prompt, slots, vocab):
    """slots x vocab averaging matrix.

    Word i goes to slot i mod slots, column crc32(word) mod vocab.
    """
    A = np.zeros((slots, vocab))
    counts = np.zeros(slots)
    for i, tok in enumerate(prompt.lower().split()):
        A[i % slots, zlib.crc32(tok.encode("utf-8")) % vocab] += 1.0
        counts[i % slots] += 1.0
    nz = counts > 0
    A[nz] /= counts[nz, None]
    return A


def embed_prompt(prompt, params, cfg):
    A = prompt_matrix(prompt, cfg.prompt_len, cfg.vocab)
    return matmul(A, params["prompt.table"]) + params["prompt.slots"]


def timestep_features(c_noise, dim):
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = 100.0 * c_noise * freqs
    return np.concatenate([np.cos(ang), np.sin(ang)])[None, :]


def embed_timestep(c_noise, params, cfg):
    h = silu(linear(timestep_features(c_noise, cfg.dim), params["time.w1"], params["time.b1"]))
    return linear(h, params["time.w2"], params["time.b2"])


def embed_video(x, params, cfg):
    """Non-overlapping q x p x p patch embedding to L x D."""
    return linear(patches(x, cfg.p, cfg.q), params["embed.w"], params["embed.b"])


def decode(tokens, params, cfg):
    x = linear(tokens, params["decode.w"], params["decode.b"])
    return unpatch(x, cfg.video_shape, cfg.p, cfg.q)


# ---- blocks --------------------------------------------------------------


def _modulate(x, shift, scale):
    return layer_norm(x) * (1.0 + scale) + shift


def dit_block(z, prompt, t_emb, params, n, heads):
    """adaLN-Zero block: joint attention over [prompt; visual], then an MLP.

    Returns (visual tokens, prompt tokens).
    """
    z, prompt = as_tensor(z), as_tensor(prompt)
    D = z.shape[-1]
    if prompt.shape[-1] != D or t_emb.shape[-1] != D:
        raise ConfigError(
            f"dit_block width mismatch: visual {D}, prompt {prompt.shape[-1]}, "
            f"time {t_emb.shape[-1]}"
        )
    pre = f"blk.{n}."
    mod = linear(silu(t_emb), params[pre + "mod_w"], params[pre + "mod_b"])
    shift1, scale1, gate1, shift2, scale2, gate2 = (mod[:, i * D : (i + 1) * D] for i in range(6))

    Lc = prompt.shape[0]
    x = concat([prompt, z], axis=0)
    h = _modulate(x, shift1, scale1)
    x = x + gate1 * multi_head_attention(h, h, params, pre + "attn.", heads)
    h = _modulate(x, shift2, scale2)
    h = gelu(linear(h, params[pre + "mlp_w1"], params[pre + "mlp_b1"]))
    h = linear(h, params[pre + "mlp_w2"], params[pre + "mlp_b2"])
    x = x + gate2 * h
    return x[Lc:], x[:Lc]


def final_layer(z, t_emb, params):
    D = z.shape[-1]
    mod = linear(silu(t_emb), params["final.mod_w"], params["final.mod_b"])
    return _modulate(z, mod[:, :D], mod[:, D:])


def forward(x, c_noise, cond, params, cfg):
    """F_θ(x; c_noise, conditions) -> tensor shaped like x."""
    x = as_tensor(x)
    if x.shape != cfg.video_shape:
        raise ConfigError(f"input video has shape {x.shape}, model expects {cfg.video_shape}")
    pe = positional_encoding(cfg.grid, cfg.dim)
    z = embed_video(x, params, cfg) + pe
    prompt = embed_prompt(cond.prompt, params, cfg)
    t_emb = embed_timestep(c_noise, params, cfg)

    z_pose = encode_motion(cond.pose, params, "enc.pose.", cfg.p, cfg.q, cfg.encoder).tokens + pe
    z_cam = encode_motion(cond.plucker, params, "enc.cam.", cfg.p, cfg.q, cfg.encoder).tokens + pe
    prior = cond.prior if cfg.use_prior else np.zeros_like(cond.prior)

    for n in range(cfg.blocks):
        z, prompt = dit_block(z, prompt, t_emb, params, n, cfg.heads)
        z, z_pose, z_cam = fusion_block(
            z, z_pose, z_cam, prior, params, n, cfg.heads, cfg.fuse_mode
        )
    return decode(final_layer(z, t_emb, params), params, cfg)


# ---- initialisation ------------------------------------------------------


def init_model(cfg, seed):
    """Every parameter of backbone, encoders and fusion blocks, seeded per name."""
    cfg.validate()
    D, P = cfg.dim, cfg.patch_size
    params = Params()

    w_embed = orthogonal(seed, "embed.w", P, D)
    params.add("embed.w", w_embed, "backbone")
    params.add("embed.b", np.zeros(D), "backbone")
    params.add("prompt.table", normal(seed, "prompt.table", (cfg.vocab, D), 0.02), "backbone")
    params.add("prompt.slots", normal(seed, "prompt.slots", (cfg.prompt_len, D), 0.02), "backbone")
    params.add("time.w1", normal(seed, "time.w1", (D, D), 1.0 / np.sqrt(D)), "backbone")
    params.add("time.b1", np.zeros(D), "backbone")
    params.add("time.w2", normal(seed, "time.w2", (D, D), 1.0 / np.sqrt(D)), "backbone")
    params.add("time.b2", np.zeros(D), "backbone")

    for n in range(cfg.blocks):
        pre = f"blk.{n}."
        params.add(pre + "mod_w", np.zeros((D, 6 * D)), "backbone")
        params.add(pre + "mod_b", np.zeros(6 * D), "backbone")
        init_attention(params, seed, pre + "attn.", D, "backbone", layer_norm_params=False)
        w1 = normal(seed, pre + "mlp_w1", (D, 4 * D), 1.0 / np.sqrt(D))
        w2 = normal(seed, pre + "mlp_w2", (4 * D, D), 1.0 / np.sqrt(4 * D))
        params.add(pre + "mlp_w1", w1, "backbone")
        params.add(pre + "mlp_b1", np.zeros(4 * D), "backbone")
        params.add(pre + "mlp_w2", w2, "backbone")
        params.add(pre + "mlp_b2", np.zeros(D), "backbone")

    params.add("final.mod_w", np.zeros((D, 2 * D)), "backbone")
    params.add("final.mod_b", np.zeros(2 * D), "backbone")
    params.add("decode.w", w_embed.T.copy(), "backbone")
    params.add("decode.b", np.zeros(P), "backbone")

    init_encoder(params, seed, "enc.pose.", POSE_CHANNELS, D, cfg.p, cfg.q, cfg.encoder)
    init_encoder(params, seed, "enc.cam.", PLUCKER_CHANNELS, D, cfg.p, cfg.q, cfg.encoder)
    for n in range(cfg.blocks):
        init_fusion_block(params, seed, n, D, cfg.lora_rank)
    return params