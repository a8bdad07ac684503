"""Loss functions. All take and return torch tensors so they stay differentiable."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

EPS = 1e-12
LOSS_NAMES = ("lc", "gd", "fd", "orth", "recon", "ld")


@dataclass
class LossBundle:
    """The six named loss scalars; a term missing from a variant is ``None``."""

    lc: float | None = None
    gd: float | None = None
    fd: float | None = None
    orth: float | None = None
    recon: float | None = None
    ld: float | None = None

    def __post_init__(self):
        for name, value in self.present().items():
            if not (value >= 0.0 and value < float("inf")):
                raise ValueError(f"loss {name} must be finite and non-negative, got {value}")

    def present(self) -> dict[str, float]:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _as_tensor(x):
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


def cross_entropy(probs, onehot):
    probs, onehot = _as_tensor(probs), _as_tensor(onehot)
    if probs.shape[0] == 0:
        raise ValueError("cross_entropy of an empty batch")
    if probs.shape != onehot.shape:
        raise ValueError("probs and onehot must have identical shapes")
    return -(onehot * torch.log(probs + EPS)).sum(dim=1).mean()


def feature_matrix(features: torch.Tensor) -> torch.Tensor:
    """Pooled features (B, C) -> row-normalized channels-by-samples (C, B)."""
    return F.normalize(features.transpose(0, 1), p=2, dim=1, eps=EPS)


def _check_unit_rows(m: torch.Tensor, tol: float = 1e-6):
    norms = torch.linalg.vector_norm(m.detach(), dim=1)
    if m.shape[1] and torch.any((norms - 1).abs() > tol):
        raise ValueError("rows must be unit norm")


def orthogonality_loss(f_fr, f_fi):
    """Return ``(l_co, l_so, l_orth)`` for two row-normalized feature matrices."""
    f_fr, f_fi = _as_tensor(f_fr), _as_tensor(f_fi)
    if f_fr.shape[1] != f_fi.shape[1]:
        raise ValueError("feature matrices need the same number of columns")
    _check_unit_rows(f_fr)
    _check_unit_rows(f_fi)
    l_co = torch.linalg.matrix_norm(f_fr @ f_fi.T)
    eye_r = torch.eye(f_fr.shape[0], dtype=f_fr.dtype)
    eye_i = torch.eye(f_fi.shape[0], dtype=f_fi.dtype)
    l_so = 0.5 * (torch.linalg.matrix_norm(f_fr @ f_fr.T - eye_r)
                  + torch.linalg.matrix_norm(f_fi @ f_fi.T - eye_i))
    return l_co, l_so, l_co + l_so


def reconstruction_loss(x, x_hat):
    """Per-sample MSE over the signal length, summed over the batch."""
    x, x_hat = _as_tensor(x), _as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    x, x_hat = x.reshape(x.shape[0], -1), x_hat.reshape(x_hat.shape[0], -1)
    return ((x - x_hat) ** 2).mean(dim=1).sum()


def domain_bce(d_source, d_target):
    """Binary cross-entropy with source labelled 0 and target labelled 1."""
    d_source, d_target = _as_tensor(d_source).reshape(-1), _as_tensor(d_target).reshape(-1)
    n = d_source.numel() + d_target.numel()
    if n == 0:
        raise ValueError("domain_bce needs at least one prediction")
    total = torch.log((1 - d_source).clamp_min(EPS)).sum() + torch.log(d_target.clamp_min(EPS)).sum()
    return -total / n


def focal_domain_loss(per_class, weights):
    per_class, weights = _as_tensor(per_class), _as_tensor(weights).to(_as_tensor(per_class).dtype)
    if torch.any(weights < 0):
        raise ValueError("attention weights must be non-negative")
    if abs(float(weights.sum()) - 1.0) > 1e-6:
        raise ValueError("attention weights must sum to 1")
    return (weights * per_class).sum()
