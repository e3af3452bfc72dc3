"""COCO-17 skeletons, pose-raster rendering, the human-region prior and a synthetic walker."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from motionfuse.errors import ConfigError, ParseError, ValidationError
from motionfuse.rng import stream

NUM_JOINTS = 17
DETECT_THRESHOLD = 0.3
LIMB_INTENSITY = 0.6

JOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# OpenPose limb order re-indexed to COCO-17 (no synthetic neck joint).
LIMBS = (
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
)

COLORS = (
    np.array(
        [
            [255, 0, 0],
            [255, 85, 0],
            [255, 170, 0],
            [255, 255, 0],
            [170, 255, 0],
            [85, 255, 0],
            [0, 255, 0],
            [0, 255, 85],
            [0, 255, 170],
            [0, 255, 255],
            [0, 170, 255],
            [0, 85, 255],
            [0, 0, 255],
            [85, 0, 255],
            [170, 0, 255],
            [255, 0, 255],
            [255, 0, 170],
            [255, 0, 85],
        ],
        dtype=np.float64,
    )
    / 255.0
)


@dataclass(eq=False)
class Skeleton:
    """17 rows of (x, y, confidence) in pixel coordinates."""

    joints: np.ndarray
    person_id: int = 0

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.shape != (NUM_JOINTS, 3):
            raise ValidationError(f"skeleton needs {NUM_JOINTS}x3 joints, got {j.shape}")
        if not np.isfinite(j).all():
            raise ValidationError("skeleton has non-finite coordinates")
        if (j[:, 2] < 0).any() or (j[:, 2] > 1).any():
            raise ValidationError("joint confidence must lie in [0, 1]")
        self.joints = j

    def detected(self, threshold=DETECT_THRESHOLD):
        return self.joints[:, 2] >= threshold

    def shifted(self, dx, dy):
        j = self.joints.copy()
        j[:, 0] += dx
        j[:, 1] += dy
        return Skeleton(j, self.person_id)


def blank_sequence(T):
    return [[] for _ in range(T)]


# ---- rendering -----------------------------------------------------------


def limb_width(H):
    return max(1, int(round(H / 64)))


def _pixel(x):
    return int(math.floor(x + 0.5))


def _stamp(canvas, ys, xs, offsets, color):
    H, W = canvas.shape[1:]
    for dy, dx in offsets:
        yy, xx = ys + dy, xs + dx
        ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        canvas[:, yy[ok], xx[ok]] = color[:, None]


def _clip_segment(x0, y0, x1, y1, box):
    """Parameter range [t0, t1] of the segment inside ``box`` (Liang-Barsky), or None."""
    xmin, ymin, xmax, ymax = box
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
    return (t0, t1) if t0 <= t1 else None


def _line(x0, y0, x1, y1, box=None):
    """Pixels of the segment, restricted to the samples that fall inside ``box``."""
    n = max(abs(x1 - x0), abs(y1 - y0)) + 1
    lo, hi = 0, n - 1
    if box is not None:
        span = _clip_segment(x0, y0, x1, y1, box)
        if span is None:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        lo, hi = math.ceil(span[0] * (n - 1)), math.floor(span[1] * (n - 1))
    k = np.arange(lo, hi + 1, dtype=np.float64)
    s = k * (1.0 / (n - 1)) if n > 1 else np.zeros(len(k))
    s[k == n - 1] = 1.0
    # offsets are rounded before adding the integer start so lines shift exactly
    xs = (x0 + np.floor(s * (x1 - x0) + 0.5)).astype(int)
    ys = (y0 + np.floor(s * (y1 - y0) + 0.5)).astype(int)
    return ys, xs


def _draw_person(canvas, sk, width):
    ok = sk.detected()
    px = [(_pixel(x), _pixel(y)) for x, y, _ in sk.joints]
    half = width // 2
    H, W = canvas.shape[1:]
    box = (-width - 1, -width - 1, W + width, H + width)
    square = [(dy, dx) for dy in range(-half, width - half) for dx in range(-half, width - half)]
    for (a, b), color in zip(LIMBS, COLORS):
        if ok[a] and ok[b]:
            ys, xs = _line(*px[a], *px[b], box)
            _stamp(canvas, ys, xs, square, LIMB_INTENSITY * color)

    r = width + 1
    span = range(-r, r + 1)
    disc = [(dy, dx) for dy in span for dx in span if dy * dy + dx * dx <= r * r]
    for j in np.flatnonzero(ok):
        x, y = px[j]
        _stamp(canvas, np.array([y]), np.array([x]), disc, COLORS[j])


def rasterize(frames, H, W):
    """Render one list of skeletons per frame into a 3 x T x H x W raster in [0, 1].

    Limbs are drawn between mutually detected joints at 60% colour, joints as
    full-colour discs; people are painted in person_id order.
    """
    out = np.zeros((3, len(frames), H, W))
    width = limb_width(H)
    for t, people in enumerate(frames):
        for sk in sorted(people, key=lambda s: s.person_id):
            _draw_person(out[:, t], sk, width)
    return out


def nearest_indices(n_src, n_dst):
    return np.minimum((np.arange(n_dst) * n_src + n_src // 2) // n_dst, n_src - 1)


def prior_mask(raster, target_dims, dilate_radius=2):
    """Binary 1 x T' x H' x W' human-region mask on a token grid."""
    Tp, Hp, Wp = target_dims
    if min(Tp, Hp, Wp) < 1:
        raise ConfigError(f"prior mask target dims must be positive, got {target_dims}")
    if dilate_radius < 0:
        raise ConfigError("dilate_radius must be >= 0")
    occupancy = raster.max(axis=0)
    T, H, W = occupancy.shape
    idx = np.ix_(nearest_indices(T, Tp), nearest_indices(H, Hp), nearest_indices(W, Wp))
    small = occupancy[idx] > 0
    if dilate_radius and small.any():
        k = 2 * dilate_radius + 1
        small = binary_dilation(small, structure=np.ones((1, k, k), dtype=bool))
    return small[None].astype(np.float64)


# ---- synthetic walker ----------------------------------------------------


@dataclass(frozen=True)
class MotionSpec:
    path: str = "line"
    start: tuple = (16.0, 16.0)
    velocity: tuple = (0.5, 0.0)
    arc_radius: float = 6.0
    arc_rate: float = 0.2
    amplitude: float = 0.5
    frequency: float = 0.125
    height: float = 20.0
    person_id: int = 0

    def __post_init__(self):
        if self.path not in ("line", "arc"):
            raise ConfigError(f"unknown walker path {self.path!r}")
        if self.height <= 0:
            raise ConfigError("walker height must be positive")


def hip_position(spec, f):
    """Pelvis centre at (possibly fractional) frame f."""
    x0, y0 = spec.start
    if spec.path == "line":
        vx, vy = spec.velocity
        return np.array([x0 + vx * f, y0 + vy * f])
    a = spec.arc_rate * f
    r = spec.arc_radius
    return np.array([x0 + r * math.sin(a), y0 + r * (1.0 - math.cos(a))])


def _limb(origin, length, angle):
    return origin + length * np.array([math.sin(angle), math.cos(angle)])


def _walker_pose(spec, f, phase, prop):
    s = spec.height * prop
    hip = hip_position(spec, f)
    swing = spec.amplitude * math.sin(2.0 * math.pi * spec.frequency * f + phase)
    up = np.array([0.0, -1.0])

    j = np.zeros((NUM_JOINTS, 3))
    j[:, 2] = 1.0
    side = np.array([0.06 * s, 0.0])
    j[11, :2] = hip - side
    j[12, :2] = hip + side
    shoulders = hip + 0.3 * s * up
    j[5, :2] = shoulders - 1.6 * side
    j[6, :2] = shoulders + 1.6 * side
    nose = hip + 0.42 * s * up
    j[0, :2] = nose
    j[1, :2] = nose + np.array([-0.03 * s, -0.02 * s])
    j[2, :2] = nose + np.array([0.03 * s, -0.02 * s])
    j[3, :2] = nose + np.array([-0.06 * s, -0.01 * s])
    j[4, :2] = nose + np.array([0.06 * s, -0.01 * s])

    for hip_j, knee_j, ankle_j, sign in ((11, 13, 15, 1.0), (12, 14, 16, -1.0)):
        th = sign * swing
        knee = _limb(j[hip_j, :2], 0.25 * s, th)
        j[knee_j, :2] = knee
        j[ankle_j, :2] = _limb(knee, 0.25 * s, th - 0.5 * abs(swing))
    for sh_j, el_j, wr_j, sign in ((5, 7, 9, -1.0), (6, 8, 10, 1.0)):
        al = 0.8 * sign * swing
        elbow = _limb(j[sh_j, :2], 0.17 * s, al)
        j[el_j, :2] = elbow
        j[wr_j, :2] = _limb(elbow, 0.15 * s, al + 0.3 * abs(swing))
    return Skeleton(j, spec.person_id)


def synth_skeleton_sequence(seed, T, spec):
    """Deterministic articulated walker: one single-person frame list per time step."""
    if T < 1:
        raise ConfigError("skeleton sequence needs T >= 1")
    rng = stream(seed, f"walker-{spec.person_id}")
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    prop = float(rng.uniform(0.95, 1.05))
    return [[_walker_pose(spec, f, phase, prop)] for f in range(T)]


# ---- text format ---------------------------------------------------------


def serialize_skeletons(frames):
    """``# frames=T`` header, then one ``frame person x y conf ...`` line per skeleton."""
    lines = [f"# frames={len(frames)}"]
    for t, people in enumerate(frames):
        for sk in people:
            vals = " ".join(repr(float(v)) for v in sk.joints.ravel())
            lines.append(f"{t} {sk.person_id} {vals}")
    return "\n".join(lines) + "\n"


def parse_skeletons(text):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# frames="):
        raise ParseError("missing '# frames=T' header", 1)
    try:
        T = int(lines[0].split("=", 1)[1])
    except ValueError as e:
        raise ParseError("bad frame count in header", 1) from e
    if T < 0:
        raise ParseError("negative frame count", 1)

    frames = blank_sequence(T)
    expected = 2 + 3 * NUM_JOINTS
    for lineno, raw in enumerate(lines[1:], 2):
        fields = raw.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) != expected:
            raise ParseError(f"expected {expected} fields, got {len(fields)}", lineno)
        try:
            t, pid = int(fields[0]), int(fields[1])
            vals = np.array([float(v) for v in fields[2:]])
        except ValueError as e:
            raise ParseError(f"bad number: {e}", lineno) from e
        if not 0 <= t < T:
            raise ParseError(f"frame index {t} outside 0..{T - 1}", lineno)
        try:
            frames[t].append(Skeleton(vals.reshape(NUM_JOINTS, 3), pid))
        except ValidationError as e:
            raise ValidationError(str(e), lineno) from e
    return frames
