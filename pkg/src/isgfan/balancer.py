"""Dynamic loss weighting against the classification loss, and the total loss."""

from __future__ import annotations

from dataclasses import dataclass

from .objectives import LossBundle

GUARD = 1e-18


@dataclass(frozen=True)
class BalancerConfig:
    delta: float = 0.5   # global domain
    zeta: float = 0.1    # focal domain
    gamma: float = 0.01  # orthogonality
    mu: float = 0.01     # reconstruction
    omega: float = 0.01  # label discriminator
    rho: float = 10.0

    def __post_init__(self):
        if min(self.delta, self.zeta, self.gamma, self.mu, self.omega) < 0:
            raise ValueError("base weights must be non-negative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    def base(self) -> dict[str, float]:
        return {"gd": self.delta, "fd": self.zeta, "orth": self.gamma, "recon": self.mu, "ld": self.omega}


def dynamic_weight(loss: float, ref_loss: float, base: float, rho: float) -> float:
    """Shrink ``base`` whenever ``loss`` exceeds ``rho`` times the reference."""
    cap = rho * ref_loss
    if loss > cap:
        return base * cap / (loss + GUARD)
    return base


def effective_weights(bundle: LossBundle, cfg: BalancerConfig = BalancerConfig()) -> dict[str, float]:
    losses = bundle.present()
    if "lc" not in losses:
        raise ValueError("the classification loss is required as reference")
    ref = losses["lc"]
    weights = {"lc": 1.0}
    for name, base in cfg.base().items():
        if name in losses:
            weights[name] = dynamic_weight(losses[name], ref, base, cfg.rho)
    return weights


def assemble_total_loss(bundle: LossBundle, cfg: BalancerConfig = BalancerConfig()):
    """Return ``(total, effective_weights)``; the classification term keeps weight 1."""
    weights = effective_weights(bundle, cfg)
    losses = bundle.present()
    total = sum(weights[k] * losses[k] for k in weights)
    return total, weights
