"""Comparator controller: move-to-centroid coverage plus potential repulsion.

The coverage part drives each robot toward the density centroid of its
sensing-limited cell with a proportional gain.  Collision avoidance adds the
gradient of an inverse-square potential with a finite influence radius, summed
over obstacles, humans at their current positions, and sensed neighbors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import cell_moments, limited_voronoi_cell
from .dynamics import wrap_angle

NEAR_FIELD_EPS = 1e-6


@dataclass
class RepulsionParams:
    gain: float = 0.05
    influence_radius: float = 1.0

    def __post_init__(self):
        if self.gain <= 0 or self.influence_radius <= 0:
            raise ValueError("repulsion gain and influence radius must be positive")


@dataclass
class BaselineConfig:
    centroid_gain: float = 0.8
    repulsion: RepulsionParams = field(default_factory=RepulsionParams)
    heading_gain: float = 2.0        # unicycle heading P-controller
    velocity_gain: float = 1.0       # double-integrator velocity tracking
    u_min: np.ndarray = None
    u_max: np.ndarray = None
    grid_res: float = 0.1
    ball_vertices: int = 32
    mass_epsilon: float = 1e-9

    def __post_init__(self):
        self.u_min = (np.full(2, -1.5) if self.u_min is None
                      else np.asarray(self.u_min, dtype=float).reshape(2))
        self.u_max = (np.full(2, 1.5) if self.u_max is None
                      else np.asarray(self.u_max, dtype=float).reshape(2))


def lloyd_input(position, centroid, gain: float) -> np.ndarray:
    """Proportional pull toward the cell centroid; zero for an empty cell."""
    if centroid is None:
        return np.zeros(2)
    return gain * (np.asarray(centroid, dtype=float) - np.asarray(position, dtype=float))


def _seeded_direction(point) -> np.ndarray:
    # Direction for the degenerate zero-distance case, deterministic in the inputs.
    digest = hashlib.sha256(np.asarray(point, dtype=float).tobytes()).digest()
    ang = 2.0 * np.pi * int.from_bytes(digest[:8], "little") / 2 ** 64
    return np.array([np.cos(ang), np.sin(ang)])


def repulsive_input(position, repellers, params: RepulsionParams,
                    saturation: float = 1.5) -> np.ndarray:
    """Inverse-square potential gradient with influence cutoff.

    Each repeller within the influence radius contributes
    gain * (1/d - 1/D_infl) / d^2 away from it; farther ones contribute nothing.
    """
    p = np.asarray(position, dtype=float)
    u = np.zeros(2)
    for rep in repellers:
        c = np.asarray(rep[0] if isinstance(rep, (tuple, list)) else rep, dtype=float)
        delta = p - c
        d = float(np.linalg.norm(delta))
        if d >= params.influence_radius:
            continue
        if d < NEAR_FIELD_EPS:
            u += saturation * _seeded_direction(c)
            continue
        mag = params.gain * (1.0 / d - 1.0 / params.influence_radius) / (d * d)
        u += mag * delta / d
    return u


def velocity_to_unicycle(v_cmd, heading, heading_gain: float) -> np.ndarray:
    """Heading P-controller mapping a velocity command to (v, omega)."""
    speed = float(np.linalg.norm(v_cmd))
    if speed < 1e-12:
        return np.zeros(2)
    err = wrap_angle(np.arctan2(v_cmd[1], v_cmd[0]) - heading)
    v = max(0.0, speed * np.cos(err))
    return np.array([v, heading_gain * err])


class BaselineController:
    """Stateless per-step coverage + repulsion controller."""

    def __init__(self, model, env, density, cfg: BaselineConfig):
        self.model = model
        self.env = env
        self.density = density
        self.cfg = cfg

    def control(self, view):
        cfg = self.cfg
        p = self.model.position(view.state)
        cell = limited_voronoi_cell(p, view.neighbors, self.env, view.sensing_range / 2.0,
                                    cfg.ball_vertices)
        moments = cell_moments(cell, self.density, cfg.grid_res, cfg.mass_epsilon)
        u_cov = np.zeros(2) if moments.empty else lloyd_input(p, moments.centroid,
                                                              cfg.centroid_gain)
        repellers = [(ob.center, "obstacle") for ob in view.obstacles]
        repellers += [(tr.positions[-1], "human") for tr in view.tracks]
        if len(view.neighbors):
            repellers += [(nb, "neighbor") for nb in np.atleast_2d(view.neighbors)]
        u_rep = repulsive_input(p, repellers, cfg.repulsion,
                                saturation=float(np.max(np.abs(cfg.u_max))))
        v_cmd = np.clip(u_cov + u_rep, cfg.u_min, cfg.u_max)

        if self.model.name == "unicycle":
            u = velocity_to_unicycle(v_cmd, view.state[2], cfg.heading_gain)
        elif self.model.name == "double_integrator":
            u = cfg.velocity_gain * (v_cmd - np.asarray(view.state[2:4], dtype=float))
        else:
            u = v_cmd
        return np.clip(u, cfg.u_min, cfg.u_max), None
