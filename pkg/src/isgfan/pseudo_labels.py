"""Confidence + entropy gated pseudo-labels for unlabeled target samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PseudoLabelConfig:
    xi: float = 0.90
    kappa: float = 0.50
    epsilon: float = 1e-12

    def __post_init__(self):
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")

    def entropy_threshold(self, num_classes: int) -> float:
        return self.kappa * entropy_upper_bound(self.xi, num_classes)


@dataclass(frozen=True)
class PseudoLabelResult:
    accepted: np.ndarray    # bool (N,)
    labels: np.ndarray      # int (N,), -1 where rejected
    confidence: np.ndarray  # (N,)
    entropy: np.ndarray     # (N,)

    @property
    def num_accepted(self) -> int:
        return int(self.accepted.sum())


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predictive_entropy(p, epsilon: float = 1e-12):
    """``-sum p log(p + eps)`` along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    return -(p * np.log(p + epsilon)).sum(axis=-1)


def entropy_upper_bound(m: float, num_classes: int) -> float:
    """Largest entropy of a C-class distribution whose top probability is ``m``."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if m <= 0 or m > 1:
        raise ValueError("m must lie in (0, 1]")
    if m == 1.0:
        return 0.0
    rest = 1.0 - m
    return float(-m * np.log(m) - rest * np.log(rest / (num_classes - 1)))


def assign_pseudo_labels(logits, config: PseudoLabelConfig = PseudoLabelConfig()) -> PseudoLabelResult:
    p = softmax_probs(logits)
    num_classes = p.shape[-1]
    conf = p.max(axis=-1)
    cls = p.argmax(axis=-1)  # first index wins ties
    ent = predictive_entropy(p, config.epsilon)
    accepted = (conf > config.xi) & (ent < config.entropy_threshold(num_classes))
    labels = np.where(accepted, cls, -1)
    return PseudoLabelResult(accepted, labels, conf, ent)
