"""Adam optimiser over named parameters."""

from dataclasses import dataclass, field

import numpy as np

from motionfuse.errors import TrainingError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update.

    ``params`` maps names to Tensors, ``grads`` maps a subset of those names to
    arrays. Parameters are rebound to new arrays, never mutated in place.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(
                f"non-finite gradient for parameter {name} at step {state.step + 1}"
            )

    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p = params[name]
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params, names=None, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.names = list(names) if names is not None else list(params.keys())
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for name in self.names:
            self.params[name].zero_grad()

    def step(self):
        grads = {n: self.params[n].grad for n in self.names if self.params[n].grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.betas, self.eps)
