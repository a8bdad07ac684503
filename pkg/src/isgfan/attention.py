"""Subdomain attention: per-class weights for the focal adversarial loss.

Classes whose EMA-smoothed subdomain loss sits below the random-guess
binary cross-entropy (ln 2) are still separable by their subdomain
classifier, i.e. under-aligned, and receive more weight.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

LN2 = float(np.log(2.0))


def anchor_value() -> float:
    """Binary cross-entropy of a predictor that always outputs 0.5."""
    return LN2


@dataclass
class AttentionState:
    num_classes: int
    alpha: float = 0.05
    tau: float = 0.02
    m_momentum: float = 0.3
    beta: float = -0.1
    eps: float = 1e-8
    theta: float = LN2
    l_ema: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.l_ema is None:
            self.l_ema = np.ones(self.num_classes)
        self.l_ema = np.asarray(self.l_ema, dtype=np.float64)
        if self.l_ema.shape != (self.num_classes,):
            raise ValueError("l_ema must have one entry per class")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 < self.m_momentum < 1:
            raise ValueError("m_momentum must lie in (0, 1)")

    def copy(self) -> "AttentionState":
        return copy.deepcopy(self)


def compute_weights(state: AttentionState, per_class_loss, per_class_count) -> np.ndarray:
    """Weights for one batch without touching ``state``."""
    loss = np.asarray(per_class_loss, dtype=np.float64)
    count = np.asarray(per_class_count, dtype=np.float64)
    C = state.num_classes
    if loss.shape != (C,) or count.shape != (C,):
        raise ValueError("per-class loss and count need one entry per class")
    if np.any(count < 0):
        raise ValueError("counts must be non-negative")
    has = count > 0
    if not has.any():
        return np.full(C, 1.0 / C)

    m = state.m_momentum
    blended = np.where(has, (1 - m) * loss + m * state.l_ema, state.l_ema)
    d = np.maximum(state.theta - blended, 0.0)
    under = d > 0

    u = 1.0 / C
    w = np.full(C, state.alpha * u)
    if under.any():
        z = d[under] / state.tau
        s = np.exp(z - z.max())
        s /= s.sum()
        w[under] = (1 - state.alpha) * s + state.alpha * u

    q = (count + state.eps) ** state.beta
    w[has] *= q[has]
    return w / (w.sum() + state.eps)


def update_ema(state: AttentionState, per_class_loss, per_class_count) -> None:
    has = np.asarray(per_class_count) > 0
    loss = np.asarray(per_class_loss, dtype=np.float64)
    m = state.m_momentum
    state.l_ema[has] = m * state.l_ema[has] + (1 - m) * loss[has]


def compute_weights_and_update(state: AttentionState, per_class_loss, per_class_count) -> np.ndarray:
    w = compute_weights(state, per_class_loss, per_class_count)
    if np.any(np.asarray(per_class_count) > 0):
        update_ema(state, per_class_loss, per_class_count)
    return w
