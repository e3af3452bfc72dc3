"""Camera poses, Plücker ray maps and RealEstate10K-style trajectory files.

Extrinsics map world points into the camera frame: x_cam = R · x_world + t.
Trajectory files store intrinsics as fractions of the image width/height;
they are scaled to pixels when a map is built for a concrete resolution.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from motionfuse.errors import DegenerateRayError, ParseError, ValidationError

ORTHO_TOL = 1e-9
REPAIR_TOL = 1e-4
RAY_CONVENTIONS = ("offset", "classic")
FIELDS_PER_LINE = 19


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    normalized: bool = False

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_pixels(self, H, W):
        if not self.normalized:
            return self
        return Intrinsics(self.fx * W, self.fy * H, self.cx * W, self.cy * H)


@dataclass(frozen=True, eq=False)
class Extrinsics:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        err = orthonormality_error(R)
        if err > ORTHO_TOL:
            raise ValidationError(f"rotation is not orthonormal (max |RᵀR - I| = {err:.3g})")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other):
        """self ∘ other: apply other first, then self."""
        return Extrinsics(self.R @ other.R, self.R @ other.t + self.t)

    def center(self):
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t


@dataclass
class CameraTrajectory:
    frames: list
    timestamps: list = field(default=None)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValidationError("a trajectory needs at least one frame")
        if self.timestamps is None:
            self.timestamps = list(range(len(self.frames)))
        if len(self.timestamps) != len(self.frames):
            raise ValidationError("timestamp count does not match frame count")

    def __len__(self):
        return len(self.frames)

    @property
    def intrinsics(self):
        return [f[0] for f in self.frames]

    @property
    def extrinsics(self):
        return [f[1] for f in self.frames]


def orthonormality_error(R):
    err = float(np.abs(R.T @ R - np.eye(3)).max())
    if np.linalg.det(R) < 0:
        err = max(err, 2.0)
    return err


def rot_z(degrees):
    return Rotation.from_euler("z", degrees, degrees=True).as_matrix()


# ---- rays ----------------------------------------------------------------


def _ray_directions(K, extr, pix, convention):
    """pix: 3 x N homogeneous pixel coordinates -> 3 x N un-normalised directions."""
    d = extr.R @ np.linalg.solve(K, pix)
    if convention == "offset":
        d = d + extr.t[:, None]
    elif convention != "classic":
        raise ValidationError(f"unknown ray convention {convention!r}")
    return d


def pixel_ray(u, v, frame, convention="offset"):
    """Plücker 6-vector (d, t × d) / |d| for pixel (u, v) of one (Intrinsics, Extrinsics) frame.

    ``offset`` uses d = R·K⁻¹·[u, v, 1]ᵀ + t; ``classic`` drops the + t and keeps t
    as the ray origin.
    """
    intr, extr = frame
    pix = np.array([[u], [v], [1.0]], dtype=np.float64)
    d = _ray_directions(intr.matrix(), extr, pix, convention)[:, 0]
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise DegenerateRayError(u, v)
    return np.concatenate([d, np.cross(extr.t, d)]) / n


def plucker_map(traj, H, W, convention="offset"):
    """Evaluate pixel rays at every pixel centre of every frame: a 6 x T x H x W map."""
    if H < 1 or W < 1:
        raise ValidationError(f"map size must be positive, got {H}x{W}")
    vs, us = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    pix = np.stack([us.ravel(), vs.ravel(), np.ones(H * W)])
    out = np.empty((6, len(traj), H, W))
    for f, (intr, extr) in enumerate(traj.frames):
        d = _ray_directions(intr.to_pixels(H, W).matrix(), extr, pix, convention)
        n = np.linalg.norm(d, axis=0)
        bad = np.flatnonzero(n < 1e-12)
        if bad.size:
            i = int(bad[0])
            raise DegenerateRayError(float(pix[0, i]), float(pix[1, i]), f)
        m = np.cross(extr.t[:, None], d, axis=0)
        out[:3, f] = (d / n).reshape(3, H, W)
        out[3:, f] = (m / n).reshape(3, H, W)
    return out


def project(points, intr, extr):
    """World points N x 3 -> (pixel coords N x 2, camera-frame depth N)."""
    cam = points @ extr.R.T + extr.t
    z = cam[:, 2]
    safe = np.where(np.abs(z) > 1e-12, z, 1.0)
    u = intr.fx * cam[:, 0] / safe + intr.cx
    v = intr.fy * cam[:, 1] / safe + intr.cy
    uv = np.stack([u, v], axis=1)
    return uv, z


def relative_pose(a, b):
    """Transform from camera a's frame to camera b's frame."""
    R = b.R @ a.R.T
    return Extrinsics(R, b.t - R @ a.t)


# ---- trajectory files ----------------------------------------------------


def _repair_rotation(R, line):
    err = orthonormality_error(R)
    if err <= ORTHO_TOL:
        return R
    if err > REPAIR_TOL:
        raise ValidationError(f"rotation is not orthonormal (max |RᵀR - I| = {err:.3g})", line)
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def parse_trajectory_file(text):
    """Parse a trajectory file into (video_id, trajectory with normalised intrinsics)."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing video identifier", 1)
    video_id = lines[0].strip()

    frames, stamps = [], []
    for lineno, raw in enumerate(lines[1:], 2):
        fields = raw.split()
        if not fields:
            continue
        if len(fields) != FIELDS_PER_LINE:
            raise ParseError(f"expected {FIELDS_PER_LINE} fields, got {len(fields)}", lineno)
        try:
            stamp = int(fields[0])
            vals = [float(x) for x in fields[1:]]
        except ValueError as e:
            raise ParseError(f"bad number: {e}", lineno) from e
        if not np.isfinite(vals).all():
            raise ParseError("non-finite value", lineno)
        fx, fy, cx, cy = vals[:4]
        P = np.array(vals[6:]).reshape(3, 4)
        try:
            intr = Intrinsics(fx, fy, cx, cy, normalized=True)
        except ValidationError as e:
            raise ValidationError(str(e), lineno) from e
        R = _repair_rotation(P[:, :3], lineno)
        frames.append((intr, Extrinsics(R, P[:, 3])))
        stamps.append(stamp)

    if not frames:
        raise ParseError("trajectory has no frames", len(lines))
    return video_id, CameraTrajectory(frames, stamps)


def _fmt(x):
    return repr(float(x))


def serialize_trajectory(video_id, traj):
    out = [video_id]
    for stamp, (intr, extr) in zip(traj.timestamps, traj.frames):
        P = np.concatenate([extr.R, extr.t[:, None]], axis=1).ravel()
        vals = [intr.fx, intr.fy, intr.cx, intr.cy]
        fields = [str(int(stamp))] + [_fmt(v) for v in vals] + ["0", "0"] + [_fmt(v) for v in P]
        out.append(" ".join(fields))
    return "\n".join(out) + "\n"


def canonical_trajectory_text(text):
    """Whitespace- and number-format-normalised form of a trajectory file."""
    lines = text.splitlines()
    out = [lines[0].strip()]
    for raw in lines[1:]:
        f = raw.split()
        if not f:
            continue
        vals = [_fmt(x) for x in f[1:5]] + ["0", "0"] + [_fmt(x) for x in f[7:]]
        out.append(" ".join([str(int(f[0]))] + vals))
    return "\n".join(out) + "\n"


def resample_trajectory(traj, T):
    """Resample onto T uniform timestamps: lerp for translation and intrinsics, slerp for R."""
    if T < 1:
        raise ValidationError("resampling needs T >= 1")
    src = np.asarray(traj.timestamps, dtype=np.float64)
    if len(traj) == 1:
        return CameraTrajectory([traj.frames[0]] * T, [int(src[0])] * T)
    if np.any(np.diff(src) <= 0):
        raise ValidationError("timestamps must be strictly increasing to resample")
    dst = np.linspace(src[0], src[-1], T)
    slerp = Slerp(src, Rotation.from_matrix(np.stack([e.R for e in traj.extrinsics])))
    rots = slerp(dst).as_matrix()
    ts = np.stack([e.t for e in traj.extrinsics])
    intr = np.array([[i.fx, i.fy, i.cx, i.cy] for i in traj.intrinsics])
    normalized = traj.intrinsics[0].normalized

    frames = []
    for k, s in enumerate(dst):
        t = np.array([np.interp(s, src, ts[:, j]) for j in range(3)])
        fx, fy, cx, cy = (float(np.interp(s, src, intr[:, j])) for j in range(4))
        frames.append((Intrinsics(fx, fy, cx, cy, normalized), Extrinsics(rots[k], t)))
    return CameraTrajectory(frames, [int(round(s)) for s in dst])


def with_intrinsics(traj, intr):
    return replace(traj, frames=[(intr, e) for _, e in traj.frames])
