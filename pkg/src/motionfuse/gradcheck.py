"""Central-difference gradient checks and the component suite run by ``gradcheck``."""

from dataclasses import dataclass, replace

import numpy as np

from motionfuse.backbone import (
    ModelConfig,
    dit_block,
    embed_prompt,
    embed_timestep,
    forward,
    init_model,
    make_conditions,
)
from motionfuse.camera import CameraTrajectory, Extrinsics, Intrinsics
from motionfuse.fusion import fusion_block
from motionfuse.layers import attention, causal_conv3d, conv2d, layer_norm, softmax, standardize
from motionfuse.log import log_deb
from motionfuse.patchify import controlnet_style_encode, patchify_motion
from motionfuse.pose import MotionSpec, synth_skeleton_sequence
from motionfuse.rng import stream
from motionfuse.tensor import Tensor, gelu, matmul, no_grad, reduce_sum, silu

PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3
# Generous bound on the relative rounding error of one evaluation of f.
ROUNDOFF = 1e-9


def _probe_indices(size, max_probes, rng):
    if max_probes is None or size <= max_probes:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_probes, replace=False))


def grad_check(f, inputs, h=1e-5, max_probes=None, rng=None, inject_fault=False):
    """Largest elementwise relative error between tape and central-difference gradients.

    ``f()`` must rebuild a scalar Tensor from the current values of ``inputs``.
    Each probed entry scores ``|a - n| / max(|a|, |n|, floor)``. The floor is the
    size of the rounding noise in ``n``, ``ROUNDOFF * max(1, |f|) / h``, so an entry
    whose true gradient is exactly zero is not judged on noise alone.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f()
    floor = max(1e-8, ROUNDOFF * max(1.0, abs(out.item())) / h)
    out.backward()
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]
    if inject_fault:
        analytic = [a * 1.01 + 1e-3 for a in analytic]

    worst = 0.0
    for x, a in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        idx = _probe_indices(flat.size, max_probes, rng)
        a_p = a.reshape(-1)[idx]
        n_p = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
            flat[i] = orig
            n_p[k] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(a_p), np.abs(n_p)), floor)
        worst = max(worst, float((np.abs(a_p - n_p) / denom).max(initial=0.0)))
    return worst


# ---- suite ---------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error < self.tolerance


def toy_model_config():
    """4-frame 8 x 8 model small enough for exhaustive finite differences."""
    return ModelConfig(
        frames=4,
        height=8,
        width=8,
        dim=12,
        blocks=1,
        heads=2,
        p=2,
        q=2,
        lora_rank=2,
        prompt_len=2,
        vocab=16,
    )


def _rand(rng, shape):
    """Magnitudes in [0.1, 2] with random signs."""
    return rng.uniform(0.1, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _live_params(cfg, seed):
    """Model parameters with every zero-initialised tensor replaced by small noise."""
    params = init_model(cfg, seed)
    rng = stream(seed, "gradcheck-params")
    for name in params:
        t = params[name]
        if not t.data.any():
            t.data = 0.3 * rng.standard_normal(t.shape)
    return params


def _toy_conditions(cfg, seed):
    intr = Intrinsics(1.0, 1.0, 0.5, 0.5, normalized=True)
    poses = [Extrinsics(np.eye(3), np.array([0.1 * f, 0.0, 0.2])) for f in range(cfg.frames)]
    frames = [(intr, e) for e in poses]
    spec = MotionSpec(start=(4.0, 4.0), velocity=(0.5, 0.0), height=6.0)
    skeletons = synth_skeleton_sequence(seed, cfg.frames, spec)
    return make_conditions(cfg, "a person walking", CameraTrajectory(frames), skeletons)


def suite(seed=0, inject_fault=False, max_probes=6):
    """(name, error, tolerance) for every primitive and composite block."""
    rng = stream(seed, "gradcheck")
    probe_rng = stream(seed, "gradcheck-probes")
    results = []

    def run(name, f, inputs, tol=PRIMITIVE_TOL, probes=max_probes):
        err = grad_check(f, inputs, max_probes=probes, rng=probe_rng, inject_fault=inject_fault)
        log_deb(f"gradcheck {name}: {err:.3e}")
        results.append(CheckResult(name, err, tol))

    def leaf(shape):
        return Tensor(_rand(rng, shape), requires_grad=True)

    a, b = leaf((3, 4)), leaf((4, 2))
    wm = rng.standard_normal((3, 2))
    run("matmul", lambda: reduce_sum(matmul(a, b) * wm), [a, b], probes=None)

    x, w, bias = leaf((2, 6, 6)), leaf((3, 2, 3, 3)), leaf((3,))
    wc = rng.standard_normal((3, 3, 3))
    run("conv2d", lambda: reduce_sum(conv2d(x, w, bias, stride=2, padding=1) * wc), [x, w, bias])

    xv, wv = leaf((2, 4, 2, 2)), leaf((3, 2, 3, 1, 1))
    wcv = rng.standard_normal((3, 2, 2, 2))
    run("causal_conv3d", lambda: reduce_sum(causal_conv3d(xv, wv, stride_t=2) * wcv), [xv, wv])

    xl, g, be = leaf((3, 5)), leaf((5,)), leaf((5,))
    wl = rng.standard_normal((3, 5))
    run("layer_norm", lambda: reduce_sum(layer_norm(xl, g, be) * wl), [xl, g, be])

    xs = leaf((3, 4))
    ws = rng.standard_normal((3, 4))
    run("softmax", lambda: reduce_sum(softmax(xs, axis=-1) * ws), [xs], probes=None)
    run("standardize", lambda: reduce_sum(standardize(xs, axis=0) * ws), [xs], probes=None)
    run("silu+gelu", lambda: reduce_sum((silu(xs) + gelu(xs)) * ws), [xs], probes=None)

    q, k, v = leaf((2, 3, 4)), leaf((2, 5, 4)), leaf((2, 5, 4))
    wa = rng.standard_normal((2, 3, 4))
    run("attention", lambda: reduce_sum(attention(q, k, v) * wa), [q, k, v])

    cfg = toy_model_config()
    params = _live_params(cfg, seed)
    cond = _toy_conditions(cfg, seed)
    L, D = cfg.tokens, cfg.dim
    raster = Tensor(cond.pose)
    wt = rng.standard_normal((L, D))
    enc = [params[n] for n in params if n.startswith("enc.pose.")]
    run(
        "patchify stack",
        lambda: reduce_sum(patchify_motion(raster, params, "enc.pose.", cfg.p, cfg.q).tokens * wt),
        enc,
    )

    ctl_params = _live_params(replace(cfg, encoder="controlnet"), seed)
    ctl = [ctl_params[n] for n in ctl_params if n.startswith("enc.pose.")]
    run(
        "controlnet encoder",
        lambda: reduce_sum(
            controlnet_style_encode(raster, ctl_params, "enc.pose.", cfg.p, cfg.q).tokens * wt
        ),
        ctl,
    )

    zv, zp, zc = leaf((L, D)), leaf((L, D)), leaf((L, D))
    prior = cond.prior.reshape(-1)
    fuse = [params[n] for n in params if n.startswith("fuse.0.")]

    def fusion_loss():
        out, sp, sc = fusion_block(zv, zp, zc, prior, params, 0, cfg.heads)
        return reduce_sum(out * wt) + 0.1 * reduce_sum(sp * wt) + 0.1 * reduce_sum(sc * wt)

    run("fusion block", fusion_loss, [zv, zp, zc] + fuse)

    temb = embed_timestep(0.3, params, cfg).detach()
    prompt = embed_prompt(cond.prompt, params, cfg).detach()
    blk = [params[n] for n in params if n.startswith("blk.0.")]
    run(
        "dit block",
        lambda: reduce_sum(dit_block(zv, prompt, temb, params, 0, cfg.heads)[0] * wt),
        [zv] + blk,
    )

    xin = leaf(cfg.video_shape)
    wo = rng.standard_normal(cfg.video_shape)
    every = [xin] + [params[n] for n in params]
    run(
        "full forward",
        lambda: reduce_sum(forward(xin, 0.3, cond, params, cfg) * wo),
        every,
        tol=MODEL_TOL,
        probes=2,
    )
    return results