"""Discrete-time robot motion models and their affine linearizations.

All models use forward-Euler discretization so that the simulator and the
controller's linearized predictions agree exactly for the integrator models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    w = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w) if np.ndim(w) else (np.pi if w == -np.pi else float(w))


@dataclass
class AffineStep:
    """One-step affine model x' = A x + B u + c around a nominal point."""
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray


class SingleIntegrator:
    name = "single_integrator"
    state_dim = 2
    input_dim = 2

    def step(self, x, u, dt):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        return x + u * dt

    def linearize(self, x, u, dt):
        return AffineStep(np.eye(2), dt * np.eye(2), np.zeros(2))

    def position(self, x):
        return np.asarray(x, dtype=float)[:2]

    def _check(self, x, u):
        if x.shape != (self.state_dim,) or u.shape != (self.input_dim,):
            raise ValueError(f"{self.name}: expected state {self.state_dim}, input "
                             f"{self.input_dim}; got {x.shape}, {u.shape}")


class DoubleIntegrator(SingleIntegrator):
    name = "double_integrator"
    state_dim = 4

    _A = np.block([[np.zeros((2, 2)), np.eye(2)], [np.zeros((2, 2)), np.zeros((2, 2))]])
    _B = np.vstack([np.zeros((2, 2)), np.eye(2)])

    def step(self, x, u, dt):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        return x + (self._A @ x + self._B @ u) * dt

    def linearize(self, x, u, dt):
        return AffineStep(np.eye(4) + dt * self._A, dt * self._B, np.zeros(4))


class Unicycle(SingleIntegrator):
    name = "unicycle"
    state_dim = 3

    def step(self, x, u, dt):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        v, omega = u
        theta = x[2]
        nxt = np.array([x[0] + v * np.cos(theta) * dt,
                        x[1] + v * np.sin(theta) * dt,
                        wrap_angle(theta + omega * dt)])
        return nxt

    def linearize(self, x, u, dt):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = u[0]
        theta = x[2]
        A = np.array([[1.0, 0.0, -v * np.sin(theta) * dt],
                      [0.0, 1.0, v * np.cos(theta) * dt],
                      [0.0, 0.0, 1.0]])
        B = np.array([[np.cos(theta) * dt, 0.0],
                      [np.sin(theta) * dt, 0.0],
                      [0.0, dt]])
        c = self.step(x, u, dt) - A @ x - B @ u
        return AffineStep(A, B, c)


_MODELS = {m.name: m for m in (SingleIntegrator, DoubleIntegrator, Unicycle)}


def make_model(name: str):
    try:
        return _MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown dynamics model {name!r}, expected one of {sorted(_MODELS)}")
