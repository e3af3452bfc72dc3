"""On-disk formats: TEN1 tensors, checkpoints and PPM frame dumps.

TEN1 layout: b"TEN1", u32 LE rank, rank x u64 LE dims, row-major f64 LE payload.
A checkpoint is a directory holding ``manifest.txt`` (one ``name role shape``
line per tensor, in model order), ``config.cfg`` and ``tensors/<name>.ten1``.
"""

from pathlib import Path

import numpy as np

from motionfuse.errors import CheckpointError, ParseError
from motionfuse.util import save_text

MAGIC = b"TEN1"


def encode_ten1(arr):
    arr = np.asarray(arr, dtype="<f8", order="C")
    header = MAGIC + np.array([arr.ndim], dtype="<u4").tobytes()
    header += np.array(arr.shape, dtype="<u8").tobytes()
    return header + arr.tobytes()


def decode_ten1(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise ParseError("not a TEN1 tensor (bad magic)")
    rank = int(np.frombuffer(buf, dtype="<u4", count=1, offset=4)[0])
    end = 8 + 8 * rank
    if len(buf) < end:
        raise ParseError(f"TEN1 header truncated: rank {rank}")
    shape = tuple(int(d) for d in np.frombuffer(buf, dtype="<u8", count=rank, offset=8))
    n = int(np.prod(shape)) if rank else 1
    if len(buf) != end + 8 * n:
        raise ParseError(f"TEN1 payload has {len(buf) - end} bytes, shape {shape} needs {8 * n}")
    return np.frombuffer(buf, dtype="<f8", count=n, offset=end).reshape(shape).astype(np.float64)


def save_tensor(path, arr):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ten1(arr))


def load_tensor(path):
    return decode_ten1(Path(path).read_bytes())


# ---- checkpoints ---------------------------------------------------------


def save_checkpoint(path, params, config_text):
    path = Path(path)
    lines = ["# name role shape"]
    for name in params:
        t = params[name]
        shape = "x".join(str(d) for d in t.shape) or "scalar"
        lines.append(f"{name} {params.role(name)} {shape}")
        save_tensor(path / "tensors" / f"{name}.ten1", t.data)
    save_text(path / "manifest.txt", "\n".join(lines) + "\n")
    save_text(path / "config.cfg", config_text)


def read_manifest(path):
    manifest = Path(path) / "manifest.txt"
    if not manifest.exists():
        raise CheckpointError(f"no manifest in {path}")
    entries = []
    for lineno, raw in enumerate(manifest.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CheckpointError(f"manifest line {lineno}: expected 'name role shape'")
        name, role, shape = parts
        dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        entries.append((name, role, dims))
    return entries


def load_checkpoint(path, params, roles=None):
    """Fill ``params`` from a checkpoint whose manifest must match it name for name.

    With ``roles`` only tensors of those roles are compared and loaded.
    """
    path = Path(path)
    entries = read_manifest(path)
    if roles is not None:
        entries = [e for e in entries if e[1] in roles]
    names = [e[0] for e in entries]
    wanted = [n for n in params if roles is None or params.role(n) in roles]
    if names != wanted:
        missing = sorted(set(wanted) - set(names))
        extra = sorted(set(names) - set(wanted))
        raise CheckpointError(
            f"checkpoint/model mismatch: missing {missing[:5]}, unexpected {extra[:5]}"
        )
    arrays = {}
    for name, role, dims in entries:
        if params.role(name) != role:
            raise CheckpointError(f"{name}: checkpoint role {role}, model role {params.role(name)}")
        arr = load_tensor(path / "tensors" / f"{name}.ten1")
        if arr.shape != dims:
            raise CheckpointError(f"{name}: manifest shape {dims}, file shape {arr.shape}")
        arrays[name] = arr
    params.load_arrays(arrays)
    return params


def checkpoint_config(path):
    cfg = Path(path) / "config.cfg"
    if not cfg.exists():
        raise CheckpointError(f"no config.cfg in checkpoint {path}")
    return cfg.read_text()


# ---- frame dumps ---------------------------------------------------------


def encode_ppm(frame):
    """Binary P6 image from an H x W x 3 array in [0, 1]."""
    h, w, _ = frame.shape
    pix = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def dump_frames(directory, video):
    """Write each frame of a 3 x T x H x W video as frame_###.ppm."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(video.shape[1]):
        frame = np.moveaxis(video[:, t], 0, -1)
        (directory / f"frame_{t:03d}.ppm").write_bytes(encode_ppm(frame))
