"""Probabilistic human trajectory forecasting.

Constant-velocity mean propagation from a short observation window, with
additive per-step covariance growth.  Any callable producing a
``HumanPrediction`` from a ``HumanTrack`` can stand in for the default model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HEADING_EPS = 1e-9


@dataclass
class PredictorConfig:
    window: int = 8            # past observations used for the velocity estimate
    sigma0: float = 0.01       # initial position variance (m^2), isotropic
    qnoise: float = 0.01       # per-step variance growth (m^2), isotropic


@dataclass
class HumanTrack:
    times: np.ndarray
    positions: np.ndarray
    track_id: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)


@dataclass
class HumanPrediction:
    means: np.ndarray          # (T, 2)
    covariances: np.ndarray    # (T, 2, 2)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 2)
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)

    @property
    def horizon(self):
        return len(self.means)


def estimate_velocity(track: HumanTrack, window: int, dt: float) -> float:
    """Chord speed over the last ``window`` samples: |x_t - x_{t-W+1}| / ((W-1) dt)."""
    n = min(window, len(track))
    if n < 2:
        return 0.0
    disp = track.positions[-1] - track.positions[-n]
    return float(np.linalg.norm(disp)) / ((n - 1) * dt)


def estimate_heading(track: HumanTrack, window: int = 8, fallback: float = 0.0) -> float:
    """Direction of the displacement over the observation window.

    Displacements below ``HEADING_EPS`` carry no direction; the caller-supplied
    fallback (e.g. the previous estimate) is returned instead.
    """
    n = min(window, len(track))
    if n < 2:
        return fallback
    disp = track.positions[-1] - track.positions[-n]
    if np.linalg.norm(disp) < HEADING_EPS:
        return fallback
    return float(np.arctan2(disp[1], disp[0]))


def predict(track: HumanTrack, horizon: int, dt: float, sigma0, qnoise,
            window: int = 8, fallback_heading: float = 0.0) -> HumanPrediction:
    """Constant-velocity forecast with linearly growing covariance.

    ``sigma0`` and ``qnoise`` may be scalars (isotropic) or 2x2 matrices.  The
    mean sequence starts at the last observed position; the heading is frozen
    over the horizon.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    sig0 = np.asarray(sigma0, dtype=float)
    sig0 = sig0 * np.eye(2) if sig0.ndim == 0 else sig0.reshape(2, 2)
    q = np.asarray(qnoise, dtype=float)
    q = q * np.eye(2) if q.ndim == 0 else q.reshape(2, 2)

    speed = estimate_velocity(track, window, dt)
    heading = estimate_heading(track, window, fallback_heading)
    step = speed * dt * np.array([np.cos(heading), np.sin(heading)])

    means = track.positions[-1] + np.arange(horizon)[:, None] * step
    covs = sig0[None] + np.arange(horizon)[:, None, None] * q[None]
    return HumanPrediction(means, covs)
