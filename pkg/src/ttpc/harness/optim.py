"""Heavy-ball SGD and the cosine learning-rate schedule."""

from __future__ import annotations

import logging
import math

import numpy as np

logger = logging.getLogger(__name__)


def cosine_lr(epoch: int, epochs: int, lr0: float) -> float:
    """lr = 0.5 * lr0 * (1 + cos(pi * epoch / epochs)); positive for all epochs."""
    if not 0 <= epoch < epochs:
        raise ValueError(f"epoch {epoch} outside [0, {epochs})")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / epochs))


def sgd_momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                      lr: float, mu: float) -> None:
    """In-place heavy-ball update: v <- mu*v + g; p <- p - lr*v."""
    velocity *= mu
    velocity += grad
    param -= lr * velocity


class SGDMomentum:
    """Tracks one velocity buffer per parameter; skips non-finite steps."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float = 0.9) -> None:
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> bool:
        """Apply one update; returns False (and leaves state alone) if any
        gradient is non-finite."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                logger.error("non-finite gradient in %s; step aborted", name)
                return False
        for name, g in grads.items():
            sgd_momentum_step(self.params[name], g, self.velocity[name],
                              lr, self.momentum)
        return True
