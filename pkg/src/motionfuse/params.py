"""Named model parameters with a role per tensor (backbone, encoder or fusion)."""

from collections.abc import Mapping

import numpy as np

from motionfuse.errors import CheckpointError, ConfigError
from motionfuse.rng import stream
from motionfuse.tensor import Tensor
from motionfuse.util import checksum

ROLES = ("backbone", "encoder", "fusion")
TRAIN_MODES = {
    "full": ROLES,
    "control-finetune": ("encoder", "fusion"),
}


class Params(Mapping):
    def __init__(self):
        self._tensors = {}
        self._roles = {}

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def add(self, name, data, role):
        if role not in ROLES:
            raise ConfigError(f"unknown parameter role {role!r}")
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter {name}")
        self._tensors[name] = Tensor(data, requires_grad=True)
        self._roles[name] = role
        return self._tensors[name]

    def role(self, name):
        return self._roles[name]

    def names(self, role=None):
        return [n for n in self._tensors if role is None or self._roles[n] == role]

    def trainable(self, mode):
        if mode not in TRAIN_MODES:
            raise ConfigError(f"unknown training mode {mode!r}")
        roles = TRAIN_MODES[mode]
        return [n for n in self._tensors if self._roles[n] in roles]

    def freeze_except(self, names):
        """Only the given parameters stay on the tape; the rest become constants."""
        keep = set(names)
        for n, t in self._tensors.items():
            t.requires_grad = n in keep
            t.grad = None

    def count(self, prefix=""):
        return sum(t.size for n, t in self._tensors.items() if n.startswith(prefix))

    def checksum(self, role=None):
        return checksum(self._tensors[n].data for n in self.names(role))

    def load_arrays(self, arrays):
        """Overwrite values from a name -> array mapping with matching shapes."""
        for name, arr in arrays.items():
            if name not in self._tensors:
                raise CheckpointError(f"checkpoint tensor {name} has no counterpart in the model")
            if self._tensors[name].shape != arr.shape:
                raise CheckpointError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"model expects {self._tensors[name].shape}"
                )
            self._tensors[name].data = np.array(arr, dtype=np.float64)


# ---- initialisers --------------------------------------------------------


def normal(seed, name, shape, std):
    return stream(seed, name).normal(0.0, std, size=shape)


def orthogonal(seed, name, rows, cols):
    """rows x cols matrix with orthonormal rows (rows <= cols) or columns (rows > cols)."""
    a = stream(seed, name).normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T
