"""Deterministic seeded multi-agent simulation engine.

Update order within a step is fixed: humans advance first, tracks update,
then every robot independently senses a frozen snapshot of the world and
computes its input, and finally all inputs are applied.  One master seed is
split into independent per-human streams (keyed by human index) and per-agent
initialization streams, so changing the robot team never perturbs human
trajectories and adding humans never reshuffles existing ones.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .baseline import BaselineConfig, BaselineController
from .density import GaussianMixture
from .dynamics import make_model, wrap_angle
from .geometry import Environment
from .metrics import MetricsGrid
from .mpc import HmpccController, MpcConfig
from .prediction import HumanTrack, PredictorConfig, estimate_heading, predict

log = logging.getLogger(__name__)

_INIT_ROBOT, _HUMAN_MOTION, _INIT_HUMAN = 1, 2, 3  # spawn-key tags


@dataclass
class RobotSpec:
    model: str
    state: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).reshape(-1)
        expected = make_model(self.model).state_dim
        if self.state.shape != (expected,):
            raise ValueError(f"{self.model} state must have {expected} entries, "
                             f"got {self.state.shape}")


@dataclass
class HumanSpec:
    position: np.ndarray
    heading: float
    speed: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        if self.speed < 0:
            raise ValueError("human speed must be >= 0")


@dataclass
class Scenario:
    env: Environment
    density: GaussianMixture
    robots: list
    humans: list = field(default_factory=list)
    controller: str = "hmpcc"
    mpc: MpcConfig = field(default_factory=MpcConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    duration: float = 15.0
    sensing_range: float = 5.0
    seed: int = 0
    human_sigma: float = 0.3
    collision_obstacle: float = 0.2   # robot-to-obstacle-surface failure distance
    collision_human: float = 0.3      # robot-to-human-center failure distance
    metrics_grid_res: float = 0.1

    def __post_init__(self):
        if self.controller not in ("hmpcc", "baseline"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.duration < self.dt:
            raise ValueError("duration must be at least one time step")
        if self.sensing_range <= 0:
            raise ValueError("sensing_range must be positive")
        for r in self.robots:
            if not self.env.contains(r.state[:2]):
                raise ValueError(f"robot initial position {r.state[:2]} outside boundary")

    @property
    def dt(self):
        return self.mpc.dt

    @property
    def n_steps(self):
        return int(np.floor(self.duration / self.dt + 1e-9))


@dataclass
class RobotView:
    """Everything a robot is allowed to know at one step."""
    state: np.ndarray
    neighbors: np.ndarray      # (M, 2) positions within sensing range
    obstacles: tuple
    tracks: list               # HumanTrack snapshots for humans within range
    sensing_range: float


@dataclass
class Outcome:
    kind: str = "success"      # success | collision | exited
    agent: int | None = None
    other: str | None = None   # "obstacle j" / "human j"
    time: float | None = None


@dataclass
class SimLog:
    scenario: Scenario
    times: np.ndarray
    robot_states: list          # per robot: (S, state_dim)
    robot_inputs: np.ndarray    # (S, N, 2)
    human_states: np.ndarray    # (S, N_h, 3): x, y, heading
    prediction_means: np.ndarray    # (S, N_h, T, 2)
    prediction_covs: np.ndarray     # (S, N_h, T, 2, 2)
    planned: list               # per step: per robot (T, 2) planned positions or None
    diagnostics: list           # per step: per robot dict or None
    metric_H: np.ndarray
    metric_Hr: np.ndarray
    metric_E: np.ndarray
    min_obstacle_dist: np.ndarray
    min_human_dist: np.ndarray
    events: list
    outcome: Outcome

    @property
    def seed(self):
        return self.scenario.seed

    @property
    def n_steps(self):
        return len(self.times)

    def digest(self) -> str:
        """Hash of the numerical trajectory content; equal runs hash equal."""
        h = hashlib.sha256()
        for arr in self.robot_states:
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        for arr in (self.robot_inputs, self.human_states, self.metric_H,
                    self.metric_Hr, self.metric_E):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        h.update(repr((self.outcome.kind, self.outcome.agent, self.outcome.other,
                       self.outcome.time)).encode())
        return h.hexdigest()


def _rng(seed: int, tag: int, index: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tag, index)))


def _sample_inside(env: Environment, rng, keepout=(), box=None):
    xmin, xmax, ymin, ymax = box if box is not None else env.bbox
    for _ in range(10000):
        p = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        if not env.contains(p):
            continue
        if any(np.linalg.norm(p - np.asarray(c)) < r for c, r in keepout):
            continue
        return p
    raise RuntimeError("could not sample a point inside the boundary")


def random_robot_specs(env: Environment, count: int, model: str, seed: int,
                       obstacle_clearance: float = 0.5, keepout=(), box=None,
                       separation: float = 0.5):
    """Seeded initial robot states: uniform positions clear of obstacles (and any
    extra keep-out discs), zero velocity, random heading.  ``box`` restricts the
    spawn region; ``separation`` is the minimum inter-robot spawn distance."""
    keep = [(ob.center, ob.radius + obstacle_clearance) for ob in env.obstacles]
    keep += [(np.asarray(c), r) for c, r in keepout]
    specs = []
    placed = []
    for i in range(count):
        rng = _rng(seed, _INIT_ROBOT, i)
        p = _sample_inside(env, rng, keep + [(q, separation) for q in placed], box)
        placed.append(p)
        if model == "double_integrator":
            state = np.concatenate([p, np.zeros(2)])
        elif model == "unicycle":
            state = np.concatenate([p, [rng.uniform(-np.pi, np.pi)]])
        else:
            state = p
        specs.append(RobotSpec(model, state))
    return specs


def random_human_specs(env: Environment, count: int, speed: float, seed: int):
    """Seeded humans; stream keyed by index so human j is the same in any team size."""
    specs = []
    for i in range(count):
        rng = _rng(seed, _INIT_HUMAN, i)
        keep = [(ob.center, ob.radius + 0.1) for ob in env.obstacles]
        p = _sample_inside(env, rng, keep)
        specs.append(HumanSpec(p, rng.uniform(-np.pi, np.pi), speed))
    return specs


def _reflect_direction(v, edge_vec):
    t = edge_vec / np.linalg.norm(edge_vec)
    n = np.array([-t[1], t[0]])
    return v - 2.0 * float(v @ n) * n


def _segment_edge_crossing(a, b, env: Environment):
    """First boundary edge crossed by segment a->b, or None."""
    verts = env.boundary
    best = None
    for i in range(len(verts)):
        p, q = verts[i], verts[(i + 1) % len(verts)]
        r = b - a
        s = q - p
        denom = r[0] * s[1] - r[1] * s[0]
        if abs(denom) < 1e-15:
            continue
        t = ((p - a)[0] * s[1] - (p - a)[1] * s[0]) / denom
        w = ((p - a)[0] * r[1] - (p - a)[1] * r[0]) / denom
        if -1e-12 <= t <= 1.0 + 1e-12 and -1e-12 <= w <= 1.0 + 1e-12:
            if best is None or t < best[0]:
                best = (t, s)
    return best


def human_step(position, heading, speed, sigma, dt, rng, env: Environment):
    """Constant-speed walk with Gaussian angular-rate noise and wall reflection.

    On boundary exit the motion direction is reflected specularly off the
    violated edge (normal component reversed) and the position is mirrored back
    inside; a nearest-point projection covers degenerate corner cases.
    """
    psi = rng.normal(0.0, sigma)
    pos = np.asarray(position, dtype=float)
    new_pos = pos + speed * dt * np.array([np.cos(heading), np.sin(heading)])
    new_heading = wrap_angle(heading + psi * dt)
    for _ in range(4):
        if env.contains(new_pos):
            return new_pos, new_heading
        hit = _segment_edge_crossing(pos, new_pos, env)
        if hit is None:
            break
        _, edge_vec = hit
        t = edge_vec / np.linalg.norm(edge_vec)
        n = np.array([-t[1], t[0]])
        # mirror the offending position across the edge line through the crossing
        cross = pos + hit[0] * (new_pos - pos)
        new_pos = new_pos - 2.0 * float((new_pos - cross) @ n) * n
        hv = np.array([np.cos(new_heading), np.sin(new_heading)])
        hv = _reflect_direction(hv, edge_vec)
        new_heading = float(np.arctan2(hv[1], hv[0]))
        pos = cross
    if not env.contains(new_pos):
        # corner fallback: stay put, reverse direction
        return np.asarray(position, dtype=float).copy(), wrap_angle(new_heading + np.pi)
    return new_pos, new_heading


def sense(index, robot_positions, robot_states, human_tracks, human_positions,
          env: Environment, sensing_range: float, obstacle_margin: float,
          window: int) -> RobotView:
    """Build robot ``index``'s view: closed-ball neighbor set, nearby obstacles,
    and the recent track history of humans in range.  Nothing else leaks in."""
    p = robot_positions[index]
    neighbors = [robot_positions[j] for j in range(len(robot_positions))
                 if j != index and np.linalg.norm(robot_positions[j] - p) <= sensing_range]
    obstacles = tuple(ob for ob in env.obstacles
                      if np.linalg.norm(ob.center - p) <= sensing_range + obstacle_margin)
    tracks = []
    for h, track in enumerate(human_tracks):
        if np.linalg.norm(human_positions[h] - p) <= sensing_range:
            times, positions = track
            keep = min(window, len(times))
            tracks.append(HumanTrack(np.array(times[-keep:]), np.array(positions[-keep:]),
                                     track_id=h))
    return RobotView(np.array(robot_states[index]),
                     np.array(neighbors).reshape(-1, 2), obstacles, tracks, sensing_range)


def make_controller(scenario: Scenario, robot: RobotSpec):
    model = make_model(robot.model)
    if scenario.controller == "hmpcc":
        return HmpccController(model, scenario.env, scenario.density, scenario.mpc,
                               scenario.predictor)
    return BaselineController(model, scenario.env, scenario.density, scenario.baseline)


def run(scenario: Scenario) -> SimLog:
    """Execute one seeded run; two calls with equal scenarios give equal logs."""
    env = scenario.env
    dt = scenario.dt
    steps = scenario.n_steps
    n_r = len(scenario.robots)
    n_h = len(scenario.humans)
    T = scenario.mpc.horizon

    models = [make_model(r.model) for r in scenario.robots]
    states = [r.state.copy() for r in scenario.robots]
    controllers = [make_controller(scenario, r) for r in scenario.robots]

    h_pos = np.array([h.position for h in scenario.humans]).reshape(n_h, 2)
    h_head = np.array([h.heading for h in scenario.humans], dtype=float)
    h_speed = np.array([h.speed for h in scenario.humans], dtype=float)
    h_rngs = [_rng(scenario.seed, _HUMAN_MOTION, i) for i in range(n_h)]
    tracks = [([0.0], [h_pos[i].copy()]) for i in range(n_h)]
    central_headings = [0.0] * n_h

    grid = MetricsGrid(env, scenario.density, scenario.metrics_grid_res)
    r_sense = scenario.sensing_range
    obstacle_margin = scenario.baseline.repulsion.influence_radius

    times = np.array([(s + 1) * dt for s in range(steps)])
    robot_states = [np.empty((steps, m.state_dim)) for m in models]
    robot_inputs = np.zeros((steps, n_r, 2))
    human_states = np.empty((steps, n_h, 3))
    pred_means = np.zeros((steps, n_h, T, 2))
    pred_covs = np.zeros((steps, n_h, T, 2, 2))
    planned = []
    diagnostics = []
    metric_H = np.empty(steps)
    metric_Hr = np.empty(steps)
    metric_E = np.empty(steps)
    min_obs = np.full(steps, np.inf)
    min_hum = np.full(steps, np.inf)
    events = []
    outcome = Outcome()

    for s in range(steps):
        t = times[s]
        # 1) humans advance, 2) tracks update
        for i in range(n_h):
            h_pos[i], h_head[i] = human_step(h_pos[i], h_head[i], h_speed[i],
                                             scenario.human_sigma, dt, h_rngs[i], env)
            tracks[i][0].append(float(t))
            tracks[i][1].append(h_pos[i].copy())
        # central predictions for the log (identical inputs to what robots see)
        for i in range(n_h):
            keep = min(scenario.predictor.window, len(tracks[i][0]))
            tr = HumanTrack(np.array(tracks[i][0][-keep:]), np.array(tracks[i][1][-keep:]),
                            track_id=i)
            central_headings[i] = estimate_heading(tr, scenario.predictor.window,
                                                   central_headings[i])
            pr = predict(tr, T, dt, scenario.predictor.sigma0, scenario.predictor.qnoise,
                         scenario.predictor.window, central_headings[i])
            pred_means[s, i] = pr.means
            pred_covs[s, i] = pr.covariances

        # 3) decentralized control over a frozen snapshot
        positions_snapshot = [models[i].position(states[i]) for i in range(n_r)]
        states_snapshot = [states[i].copy() for i in range(n_r)]
        step_planned = []
        step_diag = []
        inputs = np.zeros((n_r, 2))
        for i in range(n_r):
            view = sense(i, positions_snapshot, states_snapshot, tracks, h_pos, env,
                         r_sense, obstacle_margin, scenario.predictor.window)
            try:
                u, sol = controllers[i].control(view)
                inputs[i] = u
            except Exception as exc:  # zero input, keep the run alive
                log.warning("controller failure for robot %d at t=%.2f: %s", i, t, exc)
                events.append(f"t={t:.3f} robot {i} controller failure: {exc}")
                sol = None
            if sol is not None:
                step_planned.append(np.array([models[i].position(x) for x in sol.states]))
                step_diag.append({
                    "status": sol.status,
                    "sqp_iterations": sol.sqp_iterations,
                    "qp_iterations": sol.qp_iterations,
                    "kkt_residual": sol.kkt_residual,
                    "cost_coverage": sol.cost.coverage,
                    "cost_control": sol.cost.control,
                    "cost_slack": sol.cost.slack,
                    "cost_emergency": sol.cost.emergency,
                })
            else:
                step_planned.append(None)
                step_diag.append(None)

        # 4) apply inputs
        for i in range(n_r):
            states[i] = models[i].step(states[i], inputs[i], dt)
            robot_states[i][s] = states[i]
        robot_inputs[s] = inputs
        human_states[s, :, :2] = h_pos
        human_states[s, :, 2] = h_head
        planned.append(step_planned)
        diagnostics.append(step_diag)

        # 5) metrics and termination bookkeeping
        pos_now = np.array([models[i].position(states[i]) for i in range(n_r)])
        if n_r:
            metric_H[s] = grid.coverage_H(pos_now)
            metric_Hr[s] = grid.coverage_Hr(pos_now, r_sense / 2.0)
            metric_E[s] = grid.coverage_E(pos_now, r_sense / 2.0)
        else:
            metric_H[s] = metric_Hr[s] = metric_E[s] = 0.0
        for i in range(n_r):
            for j, ob in enumerate(env.obstacles):
                d = np.linalg.norm(pos_now[i] - ob.center) - ob.radius
                min_obs[s] = min(min_obs[s], d)
                if d < scenario.collision_obstacle and outcome.kind == "success":
                    outcome = Outcome("collision", i, f"obstacle {j}", float(t))
            for j in range(n_h):
                d = np.linalg.norm(pos_now[i] - h_pos[j])
                min_hum[s] = min(min_hum[s], d)
                if d < scenario.collision_human and outcome.kind == "success":
                    outcome = Outcome("collision", i, f"human {j}", float(t))
            if not env.contains(pos_now[i]) and outcome.kind == "success":
                outcome = Outcome("exited", i, None, float(t))

    return SimLog(scenario, times, robot_states, robot_inputs, human_states,
                  pred_means, pred_covs, planned, diagnostics,
                  metric_H, metric_Hr, metric_E, min_obs, min_hum, events, outcome)
