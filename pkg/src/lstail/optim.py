"""SGD with momentum and weight decay, plus the step learning-rate schedule."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .model import Params


class SGD:
    """Heavy-ball SGD updating arrays in place::

        v <- momentum * v + (g + weight_decay * p)
        p <- p - lr * v

    Scalars (the cosine scale, the attention temperature) get no weight decay
    and are kept above ``floor``. ``masks`` zero the update of selected entries.
    """

    def __init__(
        self,
        params: Params,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        masks: Mapping[str, np.ndarray] | None = None,
        floor: float = 1e-3,
    ):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.masks = dict(masks or {})
        self.floor = floor
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Params, lr: float) -> None:
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            if p.ndim:
                g = g + self.weight_decay * p
            v = self.velocity[k]
            v *= self.momentum
            v += g
            upd = lr * v
            if k in self.masks:
                upd = upd * self.masks[k]
            p -= upd
            if not p.ndim and p < self.floor:
                p[...] = self.floor


def step_lr(base_lr: float, epoch: int, epochs: int, milestones: Sequence[float], gamma: float = 0.1) -> float:
    """``base_lr`` times ``gamma`` per milestone passed; milestones are
    fractions of the epoch budget (0.6 of 10 epochs decays at epoch 6)."""
    passed = sum(epoch >= round(m * epochs) for m in milestones)
    return base_lr * gamma**passed
