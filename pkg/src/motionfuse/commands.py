"""All CLI command implementations."""

from dataclasses import replace
from pathlib import Path

import numpy as np

from motionfuse.backbone import init_model, make_conditions
from motionfuse.config import CLIP_INDEX, LOSS_LOG, PLANE_DEPTH, parse_config
from motionfuse.data import (
    camera_only_indices,
    clip_dirs,
    generate_clip,
    read_clip,
    write_clip,
)
from motionfuse.diffusion import (
    condition_dropout,
    latent_to_video,
    sample,
    training_loss,
    video_to_latent,
)
from motionfuse.errors import ConfigError, MotionFuseError, TrainingError, UndefinedMetricError
from motionfuse.gradcheck import suite
from motionfuse.log import log_info, log_ok, log_table, log_warn
from motionfuse.metrics import (
    MetricReport,
    det_err,
    estimate_skeletons,
    estimate_trajectory,
    has_landmarks,
    kpts_err,
    pose_err,
    rot_err,
    trans_err,
)
from motionfuse.optim import Adam
from motionfuse.pose import blank_sequence
from motionfuse.rng import stream
from motionfuse.storage import (
    checkpoint_config,
    dump_frames,
    load_checkpoint,
    save_checkpoint,
    save_tensor,
)
from motionfuse.util import parallel_map, save_text

SAMPLE_MODES = ("joint", "camera", "human", "none")
ABLATIONS = (
    ("full", {}),
    ("add", {"fuse_mode": "add"}),
    ("controlnet", {"encoder": "controlnet"}),
    ("no-prior", {"use_prior": False}),
)
OVERFIT_WINDOW = 100


# ---- gen-data ------------------------------------------------------------


def cmd_gen_data(cfg):
    root = Path(cfg.data_dir)
    camera_only = camera_only_indices(cfg.seed, cfg.clips, cfg.camera_only_fraction)

    def build(i):
        clip = generate_clip(cfg.seed, i, cfg.frames, cfg.height, cfg.width, i in camera_only)
        write_clip(root / clip.name, clip)
        return clip.name

    names = parallel_map(build, range(cfg.clips))
    save_text(root / CLIP_INDEX, "\n".join(names) + "\n")
    log_ok(f"Wrote {len(names)} clips to {root} ({len(camera_only)} camera-only)")
    return root


# ---- train ---------------------------------------------------------------


def _load_dataset(cfg, mcfg):
    root = Path(cfg.data_dir)
    if not root.is_dir():
        raise ConfigError(f"dataset directory {root} does not exist (run gen-data first)")
    latents, conds = [], []
    for d in clip_dirs(root):
        clip = read_clip(d)
        if clip.video.shape != mcfg.video_shape:
            raise ConfigError(
                f"{d}: video shape {clip.video.shape}, model expects {mcfg.video_shape}"
            )
        skeletons = clip.skeletons if clip.skeletons is not None else blank_sequence(mcfg.frames)
        latents.append(video_to_latent(clip.video))
        conds.append(make_conditions(mcfg, clip.prompt, clip.trajectory, skeletons))
    if not latents:
        raise ConfigError(f"no clips found in {root}")
    return latents, conds


def overfit_ratio(losses, window=OVERFIT_WINDOW):
    """(mean of the first window, mean of the last window, last / first)."""
    if not losses:
        return None
    first = float(np.mean(losses[:window]))
    last = float(np.mean(losses[-window:]))
    return first, last, last / first if first > 0 else float("inf")


def cmd_train(cfg):
    """Seeded Adam loop over the denoising loss; writes loss.log and checkpoints."""
    mcfg, dcfg = cfg.model(), cfg.denoiser()
    latents, conds = _load_dataset(cfg, mcfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_text(out / "config.cfg", cfg.dump())

    params = init_model(mcfg, cfg.seed)
    if cfg.init_from:
        roles = ("backbone",) if cfg.train_mode == "control-finetune" else None
        load_checkpoint(cfg.init_from, params, roles)
        log_info(f"Initialised {'backbone' if roles else 'all parameters'} from {cfg.init_from}")

    trainable = params.trainable(cfg.train_mode)
    params.freeze_except(trainable)
    frozen_sum = params.checksum("backbone") if cfg.train_mode == "control-finetune" else None
    opt = Adam(params, trainable, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    log_info(
        f"Training {len(trainable)}/{len(params)} tensors "
        f"({sum(params[n].size for n in trainable)} values) in {cfg.train_mode} mode"
    )

    batches = stream(cfg.seed, "train-batches")
    noise = stream(cfg.seed, "train-noise")
    dropout = stream(cfg.seed, "train-dropout")
    losses, lines = [], []
    for step in range(1, cfg.train_steps + 1):
        opt.zero_grad()
        picks = batches.integers(0, len(latents), size=cfg.batch_size)
        total, sigmas = None, []
        try:
            for i in picks:
                cond = condition_dropout(conds[i], cfg.p_drop, dropout)
                loss, sigma = training_loss(latents[i], cond, params, mcfg, dcfg, noise)
                total = loss if total is None else total + loss
                sigmas.append(sigma)
            total = total * (1.0 / cfg.batch_size)
            total.backward()
            opt.step()
        except TrainingError as e:
            raise TrainingError(f"step {step}: {e}") from e

        value = total.item()
        losses.append(value)
        lines.append(f"{step} {float(np.mean(sigmas))!r} {value!r}")
        if step % cfg.log_every == 0 or step == cfg.train_steps:
            log_info(f"step {step:>6}  loss {value:.5f}")
        if step % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt-{step:06d}", params, cfg.dump())

    save_text(out / LOSS_LOG, "".join(line + "\n" for line in lines))
    save_checkpoint(out / "final", params, cfg.dump())

    if frozen_sum is not None and params.checksum("backbone") != frozen_sum:
        raise TrainingError("backbone weights changed in control-finetune mode")

    summary = overfit_ratio(losses)
    if summary:
        first, last, ratio = summary
        log_ok(f"Loss {first:.5f} -> {last:.5f} (ratio {ratio:.3f}) over {len(losses)} steps")
    log_ok(f"Checkpoint written to {out / 'final'}")
    return {"checkpoint": out / "final", "losses": losses, "summary": summary}


# ---- sample --------------------------------------------------------------


def load_model(checkpoint):
    """Rebuild the model described by a checkpoint's stored config and load its weights."""
    ckpt_cfg = parse_config(checkpoint_config(checkpoint)).validate()
    params = init_model(ckpt_cfg.model(), ckpt_cfg.seed)
    load_checkpoint(checkpoint, params)
    params.freeze_except(())
    return ckpt_cfg, params


def select_conditions(cond, mode):
    if mode not in SAMPLE_MODES:
        raise ConfigError(f"sample mode must be one of {SAMPLE_MODES}, got {mode!r}")
    if mode == "camera":
        return cond.without(pose=True)
    if mode == "human":
        return cond.without(camera=True)
    if mode == "none":
        return cond.without(prompt=True, camera=True, pose=True)
    return cond


def clip_conditions(mcfg, clip):
    skeletons = clip.skeletons if clip.skeletons is not None else blank_sequence(mcfg.frames)
    return make_conditions(mcfg, clip.prompt, clip.trajectory, skeletons)


def cmd_sample(cfg, checkpoint, clip_dir=None, mode="joint", out=None):
    """Sample one video conditioned on a clip directory's annotations."""
    ckpt_cfg, params = load_model(checkpoint)
    mcfg = ckpt_cfg.model()
    if clip_dir is None:
        blank = make_conditions(mcfg, "", None, blank_sequence(mcfg.frames))
        cond = select_conditions(blank, "none")
    else:
        cond = select_conditions(clip_conditions(mcfg, read_clip(clip_dir)), mode)

    log_info(
        f"Sampling {cfg.steps} steps at guidance {cfg.guidance} (mode {mode}, seed {cfg.seed})"
    )
    z = sample(params, mcfg, ckpt_cfg.denoiser(), cond, cfg.steps, cfg.guidance, cfg.seed)
    video = latent_to_video(z)

    out = Path(out or cfg.out_dir)
    save_tensor(out / "video.ten1", video)
    dump_frames(out / "frames", video)
    save_text(out / "prompt.txt", cond.prompt + "\n")
    log_ok(f"Wrote {out / 'video.ten1'} and {video.shape[1]} frames")
    return video


# ---- eval ----------------------------------------------------------------


def _pair_metrics(gen_dir, ref_dir):
    gen, ref = read_clip(gen_dir), read_clip(ref_dir)
    if gen.video.shape != ref.video.shape:
        raise ConfigError(
            f"{gen_dir.name}: video shapes differ ({gen.video.shape} vs {ref.video.shape})"
        )
    _, T, H, W = ref.video.shape
    values = {}

    if ref.trajectory is not None:
        est = gen.trajectory
        if est is None:
            intr = ref.trajectory.intrinsics[0].to_pixels(H, W)
            est = estimate_trajectory(gen.video, intr, PLANE_DEPTH)
        values["rot_err"] = rot_err(ref.trajectory, est)
        values["kpts_err"] = kpts_err(ref.trajectory, est, H, W)
        try:
            values["trans_err"] = trans_err(ref.trajectory, est)
        except UndefinedMetricError as e:
            log_warn(f"{gen_dir.name}: {e}")

    if ref.skeletons is not None and has_landmarks(ref.skeletons):
        est = gen.skeletons if gen.skeletons is not None else estimate_skeletons(gen.video)
        values["det_err"] = det_err(ref.skeletons, est)
        try:
            values["pose_err"] = pose_err(ref.skeletons, est)
        except UndefinedMetricError as e:
            log_warn(f"{gen_dir.name}: {e}")
    return values


def cmd_eval(cfg, generated, reference, out=None):
    """Run the metric battery over clip directories paired by name."""
    generated, reference = Path(generated), Path(reference)
    gen = {d.name: d for d in clip_dirs(generated)}
    ref = {d.name: d for d in clip_dirs(reference)}
    unpaired = sorted(set(gen) ^ set(ref))
    if unpaired:
        log_warn(f"Skipping {len(unpaired)} unpaired clip(s): " + ", ".join(unpaired))
    names = sorted(set(gen) & set(ref))

    def evaluate(name):
        try:
            return name, _pair_metrics(gen[name], ref[name])
        except MotionFuseError as e:
            log_warn(f"Skipping {name}: {e}")
            return name, None

    report = MetricReport()
    for name, values in parallel_map(evaluate, names):
        if values is None:
            continue
        report.pairs += 1
        for metric, value in values.items():
            report.add(metric, value)

    out = Path(out or cfg.out_dir)
    save_text(out / "report.txt", report.to_text())
    save_text(out / "report.kv", report.to_kv())
    log_table(report.rows(), ["metric", "mean", "n"])
    log_ok(f"Evaluated {report.pairs} pair(s); report in {out}")
    return report


# ---- gradcheck -----------------------------------------------------------


def cmd_gradcheck(cfg, inject_fault=False):
    """Finite-difference suite at toy dims; True when every check passes."""
    results = suite(cfg.seed, inject_fault=inject_fault)
    rows = [
        (r.name, f"{r.error:.3e}", f"{r.tolerance:.0e}", "PASS" if r.passed else "FAIL")
        for r in results
    ]
    log_table(rows, ["component", "max rel err", "tol", "result"])
    failed = [r.name for r in results if not r.passed]
    if failed:
        log_warn(f"{len(failed)} gradient check(s) failed: " + ", ".join(failed))
        return False
    log_ok(f"All {len(results)} gradient checks passed")
    return True


# ---- ablate --------------------------------------------------------------


def cmd_ablate(cfg):
    """Train the four control-branch variants with one seed and tabulate their loss curves."""
    root = Path(cfg.out_dir)
    curves, rows = {}, []
    for name, overrides in ABLATIONS:
        log_info(f"Ablation variant {name}")
        variant = replace(cfg, out_dir=str(root / name), **overrides).validate()
        result = cmd_train(variant)
        curves[name] = result["losses"]
        finite = bool(np.isfinite(result["losses"]).all())
        first, last, ratio = result["summary"] or (float("nan"),) * 3
        rows.append(
            (name, f"{first:.5f}", f"{last:.5f}", f"{ratio:.3f}", "yes" if finite else "NO")
        )

    names = [n for n, _ in ABLATIONS]
    lines = ["# step " + " ".join(names)]
    for i in range(cfg.train_steps):
        lines.append(f"{i + 1} " + " ".join(repr(curves[n][i]) for n in names))
    save_text(root / "ablation.txt", "\n".join(lines) + "\n")
    log_table(rows, ["variant", "first", "last", "ratio", "finite"])
    return curves


# ---- sensitivity ---------------------------------------------------------


def _control_errors(video, clip, H, W):
    """(pose_err, trans_err) of a sampled video against a clip's annotations; inf if undefined."""
    intr = clip.trajectory.intrinsics[0].to_pixels(H, W)
    try:
        p = pose_err(clip.skeletons, estimate_skeletons(video))
    except UndefinedMetricError:
        p = float("inf")
    try:
        t = trans_err(clip.trajectory, estimate_trajectory(video, intr, PLANE_DEPTH))
    except UndefinedMetricError:
        t = float("inf")
    return p, t


def cmd_sensitivity(cfg, checkpoint, clips=4):
    """Own-condition vs swapped-condition samples for the first human clips of the dataset."""
    ckpt_cfg, params = load_model(checkpoint)
    mcfg, dcfg = ckpt_cfg.model(), ckpt_cfg.denoiser()
    dataset = [read_clip(d) for d in clip_dirs(cfg.data_dir)]
    human = [c for c in dataset if c.skeletons is not None and has_landmarks(c.skeletons)][:clips]
    if len(human) < 2:
        raise ConfigError("control sensitivity needs at least two clips with a person")

    def generate(clip):
        cond = clip_conditions(mcfg, clip)
        return latent_to_video(sample(params, mcfg, dcfg, cond, cfg.steps, cfg.guidance, cfg.seed))

    H, W = mcfg.height, mcfg.width
    rows, wins = [], 0
    for i, a in enumerate(human):
        b = human[(i + 1) % len(human)]
        p_own, t_own = _control_errors(generate(a), a, H, W)
        p_swap, t_swap = _control_errors(generate(b), a, H, W)
        win = p_own < p_swap and t_own < t_swap
        wins += win
        errs = [f"{e:.3f}" for e in (p_own, p_swap, t_own, t_swap)]
        rows.append((a.name, b.name, *errs, "yes" if win else "no"))

    headers = ["clip", "swapped", "pose_own", "pose_swap", "trans_own", "trans_swap", "own_wins"]
    log_table(rows, headers)
    lines = [" ".join(r) for r in [headers] + rows] + [f"wins {wins}/{len(human)}"]
    save_text(Path(cfg.out_dir) / "sensitivity.txt", "\n".join(lines) + "\n")
    log_ok(f"Own conditions win on {wins}/{len(human)} clips")
    return wins, len(human)
