import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmpcc.density import GaussianComponent, GaussianMixture, random_gmm


def test_single_component_peak_value():
    g = GaussianMixture([GaussianComponent(1.0, (0.3, -0.7), np.eye(2))])
    assert g(np.array([0.3, -0.7])) == pytest.approx(1.0 / (2.0 * np.pi), rel=1e-12)


def test_far_tail_underflows_to_zero():
    g = GaussianMixture([GaussianComponent(1.0, (0.0, 0.0), np.eye(2))])
    val = g(np.array([100.0, 0.0]))
    assert val < 1e-300


def test_superposition_of_symmetric_components():
    offset = np.array([1.2, -0.4])
    single = GaussianMixture([GaussianComponent(1.0, offset, np.eye(2))])
    double = GaussianMixture([GaussianComponent(1.0, offset, np.eye(2)),
                              GaussianComponent(1.0, -offset, np.eye(2))])
    assert double(np.zeros(2)) == pytest.approx(2.0 * single(np.zeros(2)), rel=1e-12)


def test_vectorized_matches_scalar():
    g = random_gmm(5, 4, (-3, 3, -3, 3))
    pts = np.random.default_rng(0).uniform(-3, 3, size=(50, 2))
    vec = g(pts)
    for p, v in zip(pts, vec):
        assert g(p) == pytest.approx(v, rel=1e-12)


def test_non_pd_covariance_rejected():
    with pytest.raises(ValueError):
        GaussianComponent(1.0, (0, 0), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianComponent(-0.1, (0, 0), np.eye(2))
    with pytest.raises(ValueError):
        GaussianMixture([])


def test_random_gmm_deterministic():
    a = random_gmm(42, 3, (-5, 5, -5, 5))
    b = random_gmm(42, 3, (-5, 5, -5, 5))
    assert len(a.components) == len(b.components) == 3
    for ca, cb in zip(a.components, b.components):
        assert ca.weight == cb.weight
        assert np.array_equal(ca.mean, cb.mean)
        assert np.array_equal(ca.covariance, cb.covariance)


def test_random_gmm_structure():
    g = random_gmm(7, 3, (-2, 2, -1, 1))
    assert len(g.components) == 3
    for c in g.components:
        assert -2 <= c.mean[0] <= 2
        assert -1 <= c.mean[1] <= 1


def test_random_gmm_sigma_sweep():
    lo, hi = 0.4, 1.3
    for seed in range(100):
        g = random_gmm(seed, 2, (-5, 5, -5, 5), sigma_range=(lo, hi))
        for c in g.components:
            eig = np.linalg.eigvalsh(c.covariance)
            assert np.all(eig >= lo ** 2 - 1e-12)
            assert np.all(eig <= hi ** 2 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-8, 8), st.floats(-8, 8), st.integers(0, 10 ** 6))
def test_eval_never_negative(x, y, seed):
    g = random_gmm(seed, 3, (-4, 4, -4, 4))
    assert g(np.array([x, y])) >= 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 10 ** 6))
def test_weight_scaling_is_linear(lam, seed):
    g = random_gmm(seed, 3, (-4, 4, -4, 4))
    scaled = GaussianMixture([GaussianComponent(lam * c.weight, c.mean, c.covariance)
                              for c in g.components])
    pts = np.random.default_rng(seed).uniform(-4, 4, size=(40, 2))
    base = np.asarray(g(pts))
    assert np.allclose(np.asarray(scaled(pts)), lam * base, rtol=1e-10)
    assert np.argmax(np.asarray(scaled(pts))) == np.argmax(base)
