import numpy as np
import pytest

from hmpcc.prediction import (HumanTrack, estimate_heading, estimate_velocity, predict)


def make_track(positions, dt=0.1):
    positions = np.asarray(positions, dtype=float)
    return HumanTrack(dt * np.arange(len(positions)), positions)


def test_velocity_formula():
    # 10 samples spanning 0.9 m over 9 steps of 0.1 s
    xs = np.linspace(0.0, 0.9, 10)
    track = make_track(np.column_stack([xs, np.zeros(10)]))
    assert estimate_velocity(track, 10, 0.1) == pytest.approx(1.0, rel=1e-12)


def test_velocity_stationary():
    track = make_track(np.zeros((6, 2)))
    assert estimate_velocity(track, 6, 0.1) == 0.0


def test_velocity_exact_on_straight_line():
    s = 0.73
    xs = s * 0.1 * np.arange(12)
    track = make_track(np.column_stack([xs, 2.0 * np.ones(12)]))
    assert estimate_velocity(track, 8, 0.1) == pytest.approx(s, rel=1e-12)


def test_velocity_short_history_fallbacks():
    track = make_track([[0.0, 0.0], [0.2, 0.0]])
    assert estimate_velocity(track, 10, 0.1) == pytest.approx(2.0)
    single = make_track([[1.0, 1.0]])
    assert estimate_velocity(single, 10, 0.1) == 0.0


def test_heading_cardinal_directions():
    east = make_track([[0, 0], [1, 0]])
    north = make_track([[0, 0], [0, 1]])
    assert estimate_heading(east) == pytest.approx(0.0)
    assert estimate_heading(north) == pytest.approx(np.pi / 2)


def test_heading_of_noisy_straight_walk():
    rng = np.random.default_rng(2)
    xs = np.linspace(0, 1.0, 10)
    pts = np.column_stack([xs, np.zeros(10)]) + rng.normal(0, 0.01, size=(10, 2))
    track = make_track(pts)
    assert abs(estimate_heading(track, 10)) < 0.1


def test_heading_fallback_when_stationary():
    track = make_track(np.zeros((5, 2)))
    assert estimate_heading(track, 5, fallback=1.23) == 1.23


def test_predict_stationary_covariance_growth():
    track = make_track(np.tile([2.0, -1.0], (6, 1)))
    pred = predict(track, 10, 0.1, sigma0=0.01, qnoise=0.01)
    assert np.allclose(pred.means, [2.0, -1.0])
    assert np.allclose(pred.covariances[0], 0.01 * np.eye(2))
    assert np.allclose(pred.covariances[4], 0.05 * np.eye(2), atol=1e-15)


def test_predict_constant_velocity_rollout():
    xs = 0.1 * np.arange(8)  # 1 m/s along +x
    track = make_track(np.column_stack([xs, np.zeros(8)]))
    pred = predict(track, 10, 0.1, 0.01, 0.01)
    assert np.allclose(pred.means[9], (xs[-1] + 0.9, 0.0), atol=1e-12)
    assert np.allclose(pred.means[0], (xs[-1], 0.0))


def test_predicted_means_are_collinear():
    rng = np.random.default_rng(12)
    pts = np.cumsum(rng.uniform(0.05, 0.1, size=(9, 2)), axis=0)
    track = make_track(pts)
    pred = predict(track, 10, 0.1, 0.01, 0.01)
    d = pred.means[-1] - pred.means[0]
    d = d / np.linalg.norm(d)
    normal = np.array([-d[1], d[0]])
    residuals = (pred.means - pred.means[0]) @ normal
    assert np.max(np.abs(residuals)) < 1e-9


def test_covariance_eigenvalues_monotone():
    track = make_track([[0, 0], [0.1, 0.05]])
    pred = predict(track, 10, 0.1, np.diag([0.01, 0.02]), np.diag([0.005, 0.001]))
    prev = np.array([-np.inf, -np.inf])
    for cov in pred.covariances:
        eig = np.sort(np.linalg.eigvalsh(cov))
        assert np.all(eig >= prev - 1e-15)
        prev = eig


def test_step_lengths_match_estimated_speed():
    rng = np.random.default_rng(4)
    pts = np.cumsum(rng.uniform(0.02, 0.12, size=(10, 2)), axis=0)
    track = make_track(pts)
    speed = estimate_velocity(track, 8, 0.1)
    pred = predict(track, 10, 0.1, 0.01, 0.01, window=8)
    steps = np.linalg.norm(np.diff(pred.means, axis=0), axis=1)
    assert np.allclose(steps, speed * 0.1, atol=1e-12)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        predict(make_track([[0, 0]]), 0, 0.1, 0.01, 0.01)
    with pytest.raises(ValueError):
        HumanTrack([0.0, 0.0], [[0, 0], [1, 1]])
