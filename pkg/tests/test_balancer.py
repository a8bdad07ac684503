import numpy as np
import pytest
from hypothesis import given, strategies as st

from isgfan.balancer import BalancerConfig, assemble_total_loss, dynamic_weight
from isgfan.objectives import LossBundle


def test_dynamic_weight_examples():
    assert dynamic_weight(0.5, 0.1, 0.5, 10) == 0.5
    assert dynamic_weight(2.0, 0.1, 0.5, 10) == pytest.approx(0.25, abs=1e-12)
    assert dynamic_weight(3.0, 0.0, 0.5, 10) == 0.0


def test_total_loss_examples():
    total, w = assemble_total_loss(LossBundle(lc=0.7, gd=0, fd=0, orth=0, recon=0, ld=0))
    assert total == 0.7
    b = LossBundle(lc=1.0, gd=2.0, fd=3.0, orth=4.0, recon=5.0, ld=6.0)
    total, w = assemble_total_loss(b)
    assert w == {"lc": 1.0, "gd": 0.5, "fd": 0.1, "orth": 0.01, "recon": 0.01, "ld": 0.01}
    assert total == pytest.approx(1 + 1.0 + 0.3 + 0.04 + 0.05 + 0.06)
    total, w = assemble_total_loss(LossBundle(lc=0.1, gd=5.0, fd=0, orth=0, recon=0, ld=0))
    assert w["gd"] == pytest.approx(0.1)
    assert total == pytest.approx(0.6)


def test_partial_bundle_uses_present_terms():
    total, w = assemble_total_loss(LossBundle(lc=0.2, gd=0.3))
    assert set(w) == {"lc", "gd"}
    assert total == pytest.approx(0.2 + 0.5 * 0.3)


@given(st.floats(0, 1e3), st.floats(0, 10), st.floats(0, 2), st.floats(0.1, 50))
def test_cap_and_bounds(loss, ref, base, rho):
    w = dynamic_weight(loss, ref, base, rho)
    assert 0 <= w <= base
    assert w * loss <= base * rho * ref + 1e-9


def test_continuity_at_threshold():
    ref, rho, base = 0.3, 10.0, 0.5
    for eps in [1e-3, 1e-6, 1e-9]:
        assert dynamic_weight(rho * ref + eps, ref, base, rho) == pytest.approx(base, rel=1e-2 * eps / 1e-3 + 1e-8)


def test_config_validation():
    with pytest.raises(ValueError):
        BalancerConfig(delta=-1)
    with pytest.raises(ValueError):
        BalancerConfig(rho=0)
    assert BalancerConfig().base() == {"gd": 0.5, "fd": 0.1, "orth": 0.01, "recon": 0.01, "ld": 0.01}
