"""EDM preconditioning, the weighted denoising loss, condition dropout and a
deterministic DDIM sampler with classifier-free guidance."""

import math
from dataclasses import dataclass

import numpy as np

from motionfuse.backbone import forward
from motionfuse.errors import (
    ConfigError,
    DimensionError,
    DomainError,
    NonFiniteError,
    TrainingError,
)
from motionfuse.rng import stream
from motionfuse.tensor import as_tensor, no_grad, reduce_mean
from motionfuse.util import parallel_map


@dataclass(frozen=True)
class DenoiserConfig:
    sigma_data: float = 0.5
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    p_mean: float = -1.2
    p_std: float = 1.2

    def validate(self):
        if self.sigma_data <= 0:
            raise ConfigError(f"sigma_data must be > 0, got {self.sigma_data}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if self.p_std <= 0:
            raise ConfigError(f"p_std must be > 0, got {self.p_std}")
        return self


def coefficients(sigma, sigma_data):
    """(c_skip, c_out, c_in, c_noise) for noise level sigma."""
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    s2, d2 = sigma * sigma, sigma_data * sigma_data
    return (
        d2 / (s2 + d2),
        sigma * sigma_data / math.sqrt(s2 + d2),
        1.0 / math.sqrt(s2 + d2),
        math.log(sigma) / 4.0,
    )


def loss_weight(sigma, sigma_data):
    return (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data) ** 2


def precondition(z_noised, sigma, cond, params, cfg, dcfg, net=forward):
    """D_θ(z; σ) = c_skip·z + c_out·F_θ(c_in·z; c_noise, conditions)."""
    c_skip, c_out, c_in, c_noise = coefficients(sigma, dcfg.sigma_data)
    z = as_tensor(z_noised)
    return z * c_skip + net(z * c_in, c_noise, cond, params, cfg) * c_out


def sample_sigma(rng, dcfg):
    return float(math.exp(dcfg.p_mean + dcfg.p_std * rng.standard_normal()))


def training_loss(z, cond, params, cfg, dcfg, rng, denoiser=None, sigma=None, eps=None):
    """λ_σ · mean((D_θ(z + σε; σ) - z)²) for one clean latent z.

    σ and ε are drawn from rng unless given. ``denoiser(z_noised, sigma, cond)``
    replaces the preconditioned network when set. Returns (loss, sigma).
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise TrainingError("clean latent contains non-finite values")
    if sigma is None:
        sigma = sample_sigma(rng, dcfg)
    if eps is None:
        eps = rng.standard_normal(z.shape)
    z_noised = z + sigma * eps
    try:
        if denoiser is None:
            d = precondition(z_noised, sigma, cond, params, cfg, dcfg)
        else:
            d = as_tensor(denoiser(z_noised, sigma, cond))
        diff = d - z
        loss = reduce_mean(diff * diff) * loss_weight(sigma, dcfg.sigma_data)
    except NonFiniteError as e:
        raise TrainingError(f"non-finite loss at sigma={sigma:.6g}: {e}") from e
    return loss, sigma


def condition_dropout(cond, p_drop, rng):
    """Independently null the prompt, camera and pose groups with probability p_drop."""
    if not 0 <= p_drop < 1:
        raise ConfigError(f"p_drop must satisfy 0 <= p < 1, got {p_drop}")
    u = rng.uniform(size=3)
    drop = u < p_drop
    return cond.without(prompt=bool(drop[0]), camera=bool(drop[1]), pose=bool(drop[2]))


def cfg_combine(d_cond, d_uncond, w):
    if w == 1:
        return d_cond
    if w == 0:
        return d_uncond
    d_cond, d_uncond = np.asarray(d_cond), np.asarray(d_uncond)
    if d_cond.shape != d_uncond.shape:
        raise DimensionError(f"guidance shape mismatch: {d_cond.shape} vs {d_uncond.shape}")
    return d_uncond + w * (d_cond - d_uncond)


def ddim_step(z, sigma, sigma_next, denoised):
    """Deterministic step from σ to σ_next along the probability-flow direction."""
    if not sigma > sigma_next >= 0:
        raise DomainError(
            f"schedule must satisfy sigma > sigma_next >= 0, got {sigma}, {sigma_next}"
        )
    return denoised + (sigma_next / sigma) * (z - denoised)


def sigma_grid(steps, sigma_min, sigma_max):
    """Geometric grid from sigma_max down to sigma_min over ``steps`` points, then 0."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not 0 < sigma_min < sigma_max:
        raise DomainError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if steps == 1:
        return np.array([sigma_max, 0.0])
    grid = sigma_max * (sigma_min / sigma_max) ** (np.arange(steps) / (steps - 1))
    return np.append(grid, 0.0)


def latent_to_video(z):
    return np.clip((z + 1.0) / 2.0, 0.0, 1.0)


def video_to_latent(video):
    return 2.0 * np.asarray(video, dtype=np.float64) - 1.0


def sample(params, cfg, dcfg, cond, steps=50, w=7.5, seed=0, denoiser=None):
    """Run the guided sampler and return the final latent (C x T x H x W)."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    rng = stream(seed, "sample-noise")
    z = dcfg.sigma_max * rng.standard_normal(cfg.video_shape)
    uncond = cond.without(prompt=True, camera=True, pose=True)

    def evaluate(job):
        z_in, sigma, c = job
        with no_grad():
            if denoiser is not None:
                return np.asarray(denoiser(z_in, sigma, c), dtype=np.float64)
            return precondition(z_in, sigma, c, params, cfg, dcfg).data

    sigmas = sigma_grid(steps, dcfg.sigma_min, dcfg.sigma_max)
    for s, s_next in zip(sigmas[:-1], sigmas[1:]):
        jobs = []
        if w != 0:
            jobs.append((z, s, cond))
        if w != 1:
            jobs.append((z, s, uncond))
        outs = parallel_map(evaluate, jobs)
        d = outs[0] if len(outs) == 1 else cfg_combine(outs[0], outs[1], w)
        z = ddim_step(z, s, s_next, d)
    return z
