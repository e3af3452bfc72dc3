"""Synthetic clips: a walker's pose raster composited over a grey textured ground
plane seen through a moving camera.

A clip directory holds ``video.ten1`` (3 x T x H x W in [0, 1]), ``camera.txt``
(trajectory file), ``pose.txt`` (skeleton file) and ``prompt.txt``.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from motionfuse.camera import (
    CameraTrajectory,
    Extrinsics,
    Intrinsics,
    parse_trajectory_file,
    serialize_trajectory,
)
from motionfuse.config import CLIP_INDEX, PLANE_DEPTH
from motionfuse.errors import ParseError
from motionfuse.pose import (
    MotionSpec,
    blank_sequence,
    parse_skeletons,
    rasterize,
    serialize_skeletons,
    synth_skeleton_sequence,
)
from motionfuse.rng import stream
from motionfuse.storage import load_tensor, save_tensor
from motionfuse.util import save_text

FRAME_US = 33333
CAMERA_SPEED = 0.15
MAX_YAW_DEG = 0.3

# (amplitude, kx, ky, phase) of the ground-plane grey texture
_TEXTURE = (
    (0.10, 3.1, 0.0, 0.7),
    (0.10, 0.0, 2.3, 1.9),
    (0.08, 1.7, 1.7, 0.0),
    (0.06, 4.3, -2.9, 2.4),
)


@dataclass(eq=False)
class Clip:
    name: str
    video: np.ndarray
    trajectory: CameraTrajectory = None
    skeletons: list = None
    prompt: str = ""
    camera_only: bool = False


def texture(X, Y):
    g = np.full(np.broadcast(X, Y).shape, 0.5)
    for amp, kx, ky, ph in _TEXTURE:
        g = g + amp * np.sin(kx * X + ky * Y + ph)
    return g


def synth_trajectory(seed, index, T):
    """Camera gliding at constant velocity with a slow yaw, looking down +z at the plane."""
    rng = stream(seed, f"camera-{index}")
    heading = 2.0 * math.pi * (index + rng.uniform(0.0, 0.5)) / 4.0
    v = CAMERA_SPEED * np.array([math.cos(heading), math.sin(heading), rng.uniform(-0.1, 0.1)])
    yaw = rng.uniform(-MAX_YAW_DEG, MAX_YAW_DEG)
    intr = Intrinsics(1.0, 1.0, 0.5, 0.5, normalized=True)
    frames = []
    for f in range(T):
        R = Rotation.from_euler("y", yaw * f, degrees=True).as_matrix()
        frames.append((intr, Extrinsics(R, -R @ (f * v))))
    return CameraTrajectory(frames, [f * FRAME_US for f in range(T)])


def render_background(traj, H, W, plane_depth=PLANE_DEPTH):
    """Grey texture of the plane z = plane_depth as seen through every frame: T x H x W."""
    vs, us = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    pix = np.stack([us.ravel(), vs.ravel(), np.ones(H * W)])
    out = np.empty((len(traj), H, W))
    for f, (intr, extr) in enumerate(traj.frames):
        d = extr.R.T @ np.linalg.solve(intr.to_pixels(H, W).matrix(), pix)
        c = extr.center()
        hit = d[2] > 1e-9
        s = np.where(hit, (plane_depth - c[2]) / np.where(hit, d[2], 1.0), 0.0)
        g = np.where(hit, texture(c[0] + s * d[0], c[1] + s * d[1]), 0.5)
        out[f] = g.reshape(H, W)
    return out


def render_clip(traj, skeletons, H, W):
    raster = rasterize(skeletons, H, W)
    background = np.broadcast_to(render_background(traj, H, W)[None], raster.shape)
    return np.where(raster.max(axis=0, keepdims=True) > 0, raster, background)


def walker_spec(seed, index, H, W):
    rng = stream(seed, f"walker-spec-{index}")
    direction = 1.0 if index % 2 == 0 else -1.0
    return MotionSpec(
        path="line" if index % 4 < 2 else "arc",
        start=(W * (0.5 - 0.15 * direction), H * 0.55),
        velocity=(direction * rng.uniform(0.4, 0.8) * W / 32, 0.0),
        arc_radius=0.2 * W,
        arc_rate=direction * 0.2,
        amplitude=rng.uniform(0.3, 0.6),
        frequency=0.125,
        height=0.6 * H,
    )


def _prompt(traj, spec):
    v = traj.extrinsics[-1].center() - traj.extrinsics[0].center()
    cam = "right" if v[0] > 0 else "left"
    if spec is None:
        return f"an empty textured floor, camera moving {cam}"
    walk = "right" if spec.velocity[0] > 0 else "left"
    return f"a person walking {walk} on a textured floor, camera moving {cam}"


def camera_only_indices(seed, clips, fraction):
    count = int(round(fraction * clips))
    return set(int(i) for i in stream(seed, "camera-only").permutation(clips)[:count])


def generate_clip(seed, index, T, H, W, camera_only):
    traj = synth_trajectory(seed, index, T)
    if camera_only:
        spec, skeletons = None, blank_sequence(T)
    else:
        spec = walker_spec(seed, index, H, W)
        skeletons = synth_skeleton_sequence(seed + index, T, spec)
    video = render_clip(traj, skeletons, H, W)
    return Clip(f"clip-{index:04d}", video, traj, skeletons, _prompt(traj, spec), camera_only)


# ---- clip files ----------------------------------------------------------


def write_clip(directory, clip):
    directory = Path(directory)
    save_tensor(directory / "video.ten1", clip.video)
    if clip.trajectory is not None:
        save_text(directory / "camera.txt", serialize_trajectory(clip.name, clip.trajectory))
    if clip.skeletons is not None:
        save_text(directory / "pose.txt", serialize_skeletons(clip.skeletons))
    save_text(directory / "prompt.txt", clip.prompt + "\n")


def read_clip(directory):
    """Load a clip directory; camera.txt and pose.txt are optional."""
    directory = Path(directory)
    video = load_tensor(directory / "video.ten1")
    if video.ndim != 4 or video.shape[0] != 3:
        raise ParseError(f"{directory}/video.ten1 must be 3 x T x H x W, got {video.shape}")
    traj = skeletons = None
    if (directory / "camera.txt").exists():
        _, traj = parse_trajectory_file((directory / "camera.txt").read_text())
    if (directory / "pose.txt").exists():
        skeletons = parse_skeletons((directory / "pose.txt").read_text())
    prompt_file = directory / "prompt.txt"
    prompt = prompt_file.read_text().strip() if prompt_file.exists() else ""
    camera_only = skeletons is not None and not any(skeletons)
    return Clip(directory.name, video, traj, skeletons, prompt, camera_only)


def clip_dirs(root):
    """Clip directories of a dataset, in index order when an index file exists."""
    root = Path(root)
    index = root / CLIP_INDEX
    if index.exists():
        return [root / line.strip() for line in index.read_text().splitlines() if line.strip()]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "video.ten1").exists())
