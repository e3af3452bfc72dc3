# --------------------------------------------------------------------------------------------
# motionfuse - camera + human-motion control for a toy video diffusion transformer
# --------------------------------------------------------------------------------------------
# License: MIT
# --------------------------------------------------------------------------------------------

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from motionfuse.backbone import ModelConfig
from motionfuse.diffusion import DenoiserConfig
from motionfuse.errors import ConfigError
from motionfuse.params import TRAIN_MODES

BASE = Path(".")
DEFAULT_CONFIG = BASE / "motionfuse.cfg"
DATA = BASE / "data"
RUNS = BASE / "runs"

LOSS_LOG = "loss.log"
CLIP_INDEX = "clips.txt"
PLANE_DEPTH = 4.0


@dataclass(frozen=True)
class RunConfig:
    # model
    dim: int = 96
    blocks: int = 4
    heads: int = 4
    p: int = 4
    q: int = 2
    lora_rank: int = 4
    prompt_len: int = 8
    vocab: int = 256
    # data
    frames: int = 8
    height: int = 32
    width: int = 32
    clips: int = 8
    camera_only_fraction: float = 0.5
    # optimiser
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 2
    # diffusion
    sigma_data: float = 0.5
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    p_mean: float = -1.2
    p_std: float = 1.2
    p_drop: float = 0.1
    steps: int = 50
    guidance: float = 7.5
    # control branch
    fuse_mode: str = "softmax"
    use_prior: bool = True
    encoder: str = "patchify"
    ray_convention: str = "offset"
    dilate_radius: int = 2
    # training
    train_mode: str = "full"
    train_steps: int = 1000
    checkpoint_every: int = 500
    log_every: int = 50
    init_from: str = ""
    # run
    seed: int = 0
    data_dir: str = str(DATA)
    out_dir: str = str(RUNS)

    def model(self):
        return ModelConfig(
            frames=self.frames,
            height=self.height,
            width=self.width,
            dim=self.dim,
            blocks=self.blocks,
            heads=self.heads,
            p=self.p,
            q=self.q,
            lora_rank=self.lora_rank,
            prompt_len=self.prompt_len,
            vocab=self.vocab,
            fuse_mode=self.fuse_mode,
            use_prior=self.use_prior,
            encoder=self.encoder,
            ray_convention=self.ray_convention,
            dilate_radius=self.dilate_radius,
        )

    def denoiser(self):
        return DenoiserConfig(
            self.sigma_data, self.sigma_min, self.sigma_max, self.p_mean, self.p_std
        )

    def validate(self):
        """Check every constraint before any model state is allocated."""
        self.model().validate()
        self.denoiser().validate()
        if not 0 <= self.p_drop < 1:
            raise ConfigError(f"p_drop must satisfy 0 <= p_drop < 1, got {self.p_drop}")
        if self.train_mode not in TRAIN_MODES:
            raise ConfigError(
                f"train_mode must be one of {tuple(TRAIN_MODES)}, got {self.train_mode!r}"
            )
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not 0 <= self.camera_only_fraction <= 1:
            raise ConfigError(
                f"camera_only_fraction must lie in [0, 1], got {self.camera_only_fraction}"
            )
        for name in ("steps", "batch_size", "checkpoint_every", "log_every", "clips"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.train_steps < 0:
            raise ConfigError(f"train_steps must be >= 0, got {self.train_steps}")
        return self

    def dump(self):
        return "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items())

    def with_overrides(self, pairs):
        """Apply ``key=value`` strings (as from repeated --set flags)."""
        updates = {}
        for i, pair in enumerate(pairs, 1):
            key, value = _split(pair, f"--set #{i}")
            updates[key] = _convert(key, value, f"--set #{i}")
        return replace(self, **updates)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _split(line, where):
    if "=" not in line:
        raise ConfigError(f"{where}: expected key=value, got {line!r}")
    key, value = (s.strip() for s in line.split("=", 1))
    if key not in _TYPES:
        raise ConfigError(f"{where}: unknown key {key!r}")
    return key, value


def _convert(key, value, where):
    kind = _TYPES[key]
    try:
        if kind in (bool, "bool"):
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
    except ValueError as e:
        raise ConfigError(f"{where}: bad value {value!r} for {key}") from e
    return value


def parse_config(text, base=None):
    """Parse ``key=value`` lines on top of ``base`` (defaults when None)."""
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = _split(line, f"line {lineno}")
        updates[key] = _convert(key, value, f"line {lineno}")
    return replace(base or RunConfig(), **updates)


def load_config(path=None, overrides=(), seed=None, out=None):
    """Defaults, then the config file (if any), then --set pairs, then --seed / --out."""
    path = Path(path) if path else DEFAULT_CONFIG
    cfg = RunConfig()
    if path.exists():
        cfg = parse_config(path.read_text(), cfg)
    elif path != DEFAULT_CONFIG:
        raise ConfigError(f"config file {path} does not exist")
    cfg = cfg.with_overrides(overrides)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, out_dir=str(out))
    return cfg.validate()
