import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from isgfan.objectives import (LossBundle, cross_entropy, domain_bce, feature_matrix, focal_domain_loss,
                               orthogonality_loss, reconstruction_loss)


def test_cross_entropy_examples():
    assert float(cross_entropy([[1.0, 0.0]], [[1.0, 0.0]])) == pytest.approx(0.0, abs=1e-11)
    assert float(cross_entropy([[0.5, 0.5]], [[0, 1.0]])) == pytest.approx(math.log(2), abs=1e-11)
    assert float(cross_entropy([[0.7, 0.3]], [[1.0, 0]])) == pytest.approx(0.356674943938732379, abs=1e-11)
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((0, 2)), np.zeros((0, 2)))


def test_orthogonality_examples():
    eye = np.eye(4)
    co, so, orth = orthogonality_loss(eye[:2], eye[2:])
    assert (float(co), float(so), float(orth)) == (0.0, 0.0, 0.0)
    co, so, orth = orthogonality_loss([[1.0]], [[1.0]])
    assert (float(co), float(so), float(orth)) == (1.0, 0.0, 1.0)
    co, so, _ = orthogonality_loss(eye[:2], eye[:2])
    assert float(co) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert float(so) == 0.0


def test_orthogonality_requires_unit_rows():
    with pytest.raises(ValueError, match="unit norm"):
        orthogonality_loss([[2.0, 0.0]], [[1.0, 0.0]])


def _random_unit(rng, r, n):
    m = rng.normal(size=(r, n))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def test_orthogonality_symmetry_and_column_permutation(rng):
    a, b = _random_unit(rng, 5, 7), _random_unit(rng, 5, 7)
    co1, so1, o1 = orthogonality_loss(a, b)
    co2, so2, o2 = orthogonality_loss(b, a)
    assert float(o1) == pytest.approx(float(o2), abs=1e-12)
    perm = rng.permutation(7)
    co3, _, _ = orthogonality_loss(a[:, perm], b[:, perm])
    assert float(co3) == pytest.approx(float(co1), abs=1e-12)


def test_feature_matrix_orientation():
    f = torch.randn(6, 10, dtype=torch.float64)
    m = feature_matrix(f)
    assert m.shape == (10, 6)
    np.testing.assert_allclose(torch.linalg.vector_norm(m, dim=1).numpy(), 1.0, atol=1e-12)


def test_reconstruction_examples():
    x = torch.randn(3, 8, dtype=torch.float64)
    assert float(reconstruction_loss(x, x)) == 0.0
    assert float(reconstruction_loss(np.zeros((1, 4)), np.ones((1, 4)))) == 1.0
    x = np.zeros((2, 4))
    x_hat = np.array([[1, 1, 0, 0], [1, 0, 0, 0]], float)  # per-sample MSE 0.5, 0.25
    assert float(reconstruction_loss(x, x_hat)) == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(ValueError):
        reconstruction_loss(np.zeros((1, 4)), np.zeros((1, 5)))


def test_domain_bce_examples():
    assert float(domain_bce([0.0], [1.0])) == pytest.approx(0.0, abs=1e-12)
    assert float(domain_bce([0.5, 0.5], [0.5])) == pytest.approx(math.log(2), abs=1e-12)
    assert float(domain_bce([0.2], [0.9])) == pytest.approx(0.164252033486018028, abs=1e-12)
    assert float(domain_bce([], [0.7])) == pytest.approx(-math.log(0.7), abs=1e-12)
    with pytest.raises(ValueError):
        domain_bce([], [])


def test_focal_domain_loss_examples():
    assert float(focal_domain_loss([0.4, 0.8], [0.5, 0.5])) == pytest.approx(0.6)
    assert float(focal_domain_loss([0.4, 0.8, 0.1], [0, 0, 1.0])) == pytest.approx(0.1)
    assert float(focal_domain_loss([1.0, 0.2], [0.25, 0.75])) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        focal_domain_loss([1.0, 1.0], [1.5, -0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cross_entropy_nonnegative(seed):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(4), size=5)
    y = np.eye(4)[r.integers(0, 4, 5)]
    assert float(cross_entropy(p, y)) >= 0


def test_loss_bundle():
    b = LossBundle(lc=0.1, gd=0.5)
    assert b.present() == {"lc": 0.1, "gd": 0.5}
    with pytest.raises(ValueError):
        LossBundle(lc=-1.0)
    with pytest.raises(ValueError):
        LossBundle(lc=float("nan"))
