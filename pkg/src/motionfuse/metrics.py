"""Camera-alignment (RotErr, TransErr, KptsErr) and human-motion (PoseErr, DetErr)
metrics, the report they are collected in, and the video-side estimators used
when a generated clip comes without annotations."""

from dataclasses import dataclass, field

import numpy as np

from motionfuse.camera import CameraTrajectory, Extrinsics, project, relative_pose
from motionfuse.errors import ParseError, UndefinedMetricError, ValidationError
from motionfuse.log import log_warn
from motionfuse.pose import COLORS, DETECT_THRESHOLD, NUM_JOINTS, Skeleton

METRICS = ("rot_err", "trans_err", "kpts_err", "pose_err", "det_err")
PROBE_DEPTHS = (2.0, 4.0, 8.0)
PROBE_SIDE = 5


def _check_lengths(gt, est):
    if len(gt) != len(est):
        raise ValidationError(f"trajectory length mismatch: {len(gt)} vs {len(est)}")


def _steps(traj):
    ex = traj.extrinsics
    return [relative_pose(a, b) for a, b in zip(ex[:-1], ex[1:])]


def geodesic_deg(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def rot_err(gt, est):
    """Mean geodesic angle in degrees between per-step relative rotations."""
    _check_lengths(gt, est)
    pairs = list(zip(_steps(gt), _steps(est)))
    if not pairs:
        raise UndefinedMetricError("rot_err needs at least two frames")
    return float(np.mean([geodesic_deg(a.R, b.R) for a, b in pairs]))


def trans_err(gt, est, eps=1e-9):
    """Mean L2 distance between unit per-step relative translation directions."""
    _check_lengths(gt, est)
    terms = []
    for a, b in zip(_steps(gt), _steps(est)):
        na, nb = np.linalg.norm(a.t), np.linalg.norm(b.t)
        if na < eps or nb < eps:
            continue
        terms.append(np.linalg.norm(a.t / na - b.t / nb))
    if not terms:
        raise UndefinedMetricError("trans_err: every step has a zero translation")
    return float(np.mean(terms))


def probe_grid(traj, H, W):
    """5 x 5 x 3 world points spanning the first frame's view at depths 2, 4 and 8."""
    intr = traj.intrinsics[0].to_pixels(H, W)
    extr = traj.extrinsics[0]
    us = np.linspace(0.0, W, PROBE_SIDE)
    vs = np.linspace(0.0, H, PROBE_SIDE)
    pix = np.array([[u, v, 1.0] for u in us for v in vs]).T
    rays = np.linalg.solve(intr.matrix(), pix)
    cam = np.concatenate([d * rays for d in PROBE_DEPTHS], axis=1).T
    return (cam - extr.t) @ extr.R


def kpts_err(gt, est, H, W, probes=None):
    """Mean pixel distance between probe points projected through gt and est cameras."""
    _check_lengths(gt, est)
    if probes is None:
        probes = probe_grid(gt, H, W)
    dists, skipped = [], 0
    for (ig, eg), (ie, ee) in zip(gt.frames, est.frames):
        uv_g, z_g = project(probes, ig.to_pixels(H, W), eg)
        uv_e, z_e = project(probes, ie.to_pixels(H, W), ee)
        ok = (z_g > 0) & (z_e > 0)
        skipped += int((~ok).sum())
        dists.extend(np.linalg.norm(uv_g[ok] - uv_e[ok], axis=1))
    if skipped:
        log_warn(f"kpts_err: skipped {skipped} probe projection(s) behind a camera")
    if not dists:
        raise UndefinedMetricError("kpts_err: every probe is behind a camera")
    return float(np.mean(dists))


def _people(frame):
    return {sk.person_id: sk for sk in frame}


def _check_frames(gt, est):
    if len(gt) != len(est):
        raise ValidationError(f"skeleton sequence length mismatch: {len(gt)} vs {len(est)}")


def pose_err(gt, est, threshold=DETECT_THRESHOLD):
    """Mean pixel distance over joints detected in both gt and est (matched by person id)."""
    _check_frames(gt, est)
    dists = []
    for fg, fe in zip(gt, est):
        pe = _people(fe)
        for pid, sg in _people(fg).items():
            se = pe.get(pid)
            if se is None:
                continue
            both = sg.detected(threshold) & se.detected(threshold)
            dists.extend(np.linalg.norm(sg.joints[both, :2] - se.joints[both, :2], axis=1))
    if not dists:
        raise UndefinedMetricError("pose_err: no mutually detected joints")
    return float(np.mean(dists))


def det_err(gt, est, threshold=DETECT_THRESHOLD):
    """Percentage of gt-detected landmarks that est fails to detect."""
    _check_frames(gt, est)
    total = missed = 0
    for fg, fe in zip(gt, est):
        pe = _people(fe)
        for pid, sg in _people(fg).items():
            found = sg.detected(threshold)
            total += int(found.sum())
            se = pe.get(pid)
            if se is None:
                missed += int(found.sum())
            else:
                missed += int((found & ~se.detected(threshold)).sum())
    return 0.0 if total == 0 else 100.0 * missed / total


def has_landmarks(frames, threshold=DETECT_THRESHOLD):
    return any(sk.detected(threshold).any() for frame in frames for sk in frame)


# ---- report --------------------------------------------------------------


@dataclass
class MetricReport:
    values: dict = field(default_factory=lambda: {m: [] for m in METRICS})
    pairs: int = 0

    def add(self, metric, value):
        if metric not in self.values:
            raise ValidationError(f"unknown metric {metric!r}")
        if not (np.isfinite(value) and value >= 0):
            raise ValidationError(f"{metric} value must be finite and >= 0, got {value}")
        self.values[metric].append(float(value))

    def mean(self, metric):
        v = self.values[metric]
        return float(np.mean(v)) if v else None

    def count(self, metric):
        return len(self.values[metric])

    def rows(self):
        out = []
        for m in METRICS:
            mean = self.mean(m)
            out.append((m, "n/a" if mean is None else f"{mean:.6g}", self.count(m)))
        return out

    def to_text(self):
        lines = [f"pairs {self.pairs}"]
        lines += [f"{m:<10} mean {mean:>12}  n={n}" for m, mean, n in self.rows()]
        return "\n".join(lines) + "\n"

    def to_kv(self):
        lines = [f"pairs={self.pairs}"]
        for m in METRICS:
            mean = self.mean(m)
            lines.append(f"{m}.mean={'nan' if mean is None else repr(mean)}")
            lines.append(f"{m}.count={self.count(m)}")
            lines.append(f"{m}.values={','.join(repr(v) for v in self.values[m])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_kv(cls, text):
        rep = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("expected key=value", lineno)
            key, value = line.split("=", 1)
            if key == "pairs":
                rep.pairs = int(value)
                continue
            metric, _, attr = key.partition(".")
            if metric not in rep.values or attr not in ("mean", "count", "values"):
                raise ParseError(f"unknown report key {key!r}", lineno)
            if attr == "values" and value:
                try:
                    rep.values[metric] = [float(v) for v in value.split(",")]
                except ValueError as e:
                    raise ParseError(f"bad value list for {metric}", lineno) from e
        return rep


# ---- video-side estimators -----------------------------------------------


def estimate_skeletons(video, tol=0.15):
    """Recover one skeleton per frame from the full-intensity joint colours.

    A joint is the centroid of the pixels closest to its colour (within ``tol``
    in RGB); joints with no such pixel get confidence 0. Frames with no joint
    at all have no person.
    """
    C, T, H, W = video.shape
    frames = []
    ys, xs = np.mgrid[0:H, 0:W]
    for t in range(T):
        pix = np.moveaxis(video[:, t], 0, -1)
        d = np.linalg.norm(pix[:, :, None, :] - COLORS[None, None, :NUM_JOINTS, :], axis=-1)
        nearest = d.argmin(axis=-1)
        close = d.min(axis=-1) < tol
        joints = np.zeros((NUM_JOINTS, 3))
        for j in range(NUM_JOINTS):
            sel = close & (nearest == j)
            if sel.any():
                joints[j] = (xs[sel].mean(), ys[sel].mean(), 1.0)
        frames.append([Skeleton(joints, 0)] if joints[:, 2].any() else [])
    return frames


def _background(frame):
    """Grey-level frame with saturated (pose-coloured) pixels replaced by the mean grey."""
    grey = frame.mean(axis=0)
    colored = frame.max(axis=0) - frame.min(axis=0) > 0.2
    if colored.all():
        return np.zeros_like(grey)
    grey = np.where(colored, grey[~colored].mean(), grey)
    return grey - grey.mean()


def phase_shift(a, b):
    """Sub-pixel (dx, dy) such that b(x) ≈ a(x - (dx, dy))."""
    Fa, Fb = np.fft.fft2(a), np.fft.fft2(b)
    cross = Fb * np.conj(Fa)
    cross /= np.maximum(np.abs(cross), 1e-12)
    r = np.real(np.fft.ifft2(cross))
    H, W = r.shape
    py, px = np.unravel_index(int(np.argmax(r)), r.shape)

    def refine(m, c, p):
        denom = m - 2.0 * c + p
        return 0.0 if abs(denom) < 1e-12 else 0.5 * (m - p) / denom

    dy = py + refine(r[(py - 1) % H, px], r[py, px], r[(py + 1) % H, px])
    dx = px + refine(r[py, (px - 1) % W], r[py, px], r[py, (px + 1) % W])
    if dy > H / 2:
        dy -= H
    if dx > W / 2:
        dx -= W
    return float(dx), float(dy)


def estimate_trajectory(video, intrinsics, plane_depth):
    """In-plane camera translation from background phase correlation; R = I throughout.

    ``intrinsics`` are pixel intrinsics of the video; ``plane_depth`` is the depth of
    the textured background plane.
    """
    T = video.shape[1]
    t = np.zeros(3)
    frames = [(intrinsics, Extrinsics.identity())]
    prev = _background(video[:, 0])
    for f in range(1, T):
        cur = _background(video[:, f])
        du, dv = phase_shift(prev, cur)
        t = t + np.array([du * plane_depth / intrinsics.fx, dv * plane_depth / intrinsics.fy, 0.0])
        frames.append((intrinsics, Extrinsics(np.eye(3), t.copy())))
        prev = cur
    return CameraTrajectory(frames)
