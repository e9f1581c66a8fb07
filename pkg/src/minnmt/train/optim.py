import math
from dataclasses import asdict, dataclass, fields

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass
class OptimState:
    """Plain SGD with step decay and global-norm clipping.

    The rate is multiplied by ``decay_factor`` at the end of every epoch
    numbered ``decay_after_epoch`` or later, and (when ``decay_on_plateau``)
    whenever the validation loss fails to improve.
    """

    learning_rate: float = 1.0
    decay_factor: float = 0.5
    decay_after_epoch: int | None = None
    decay_on_plateau: bool = False
    clip_norm: float = 5.0
    epoch: int = 0
    seed: int = 0
    best_valid: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")

    def end_epoch(self, valid_loss=None):
        self.epoch += 1
        decay = self.decay_after_epoch is not None and self.epoch >= self.decay_after_epoch
        if valid_loss is not None:
            if self.best_valid is not None and valid_loss >= self.best_valid and self.decay_on_plateau:
                decay = True
            if self.best_valid is None or valid_loss < self.best_valid:
                self.best_valid = valid_loss
        if decay:
            self.learning_rate *= self.decay_factor

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown optimizer fields {sorted(unknown)}")
        return cls(**d)


def global_norm(grads):
    """L2 norm over every gradient, accumulated in sorted name order."""
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_and_step(params, grads, opt):
    """Clip the gradient set to ``opt.clip_norm`` and apply one SGD step in place.

    Returns the pre-clipping global norm.
    """
    for name in sorted(grads):
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if grads[name].shape != params[name].shape:
            raise ValueError(f"gradient shape {grads[name].shape} does not match "
                             f"parameter {name!r} {params[name].shape}")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)
    norm = global_norm(grads)
    factor = opt.clip_norm / norm if norm > opt.clip_norm else None
    for name in sorted(grads):
        g = grads[name] if factor is None else grads[name] * factor
        params[name] -= opt.learning_rate * g
    return norm
