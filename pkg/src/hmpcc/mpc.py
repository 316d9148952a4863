"""Per-robot coverage MPC with probabilistic human avoidance.

Each control step solves a horizon-T program: quadratic coverage cost over the
robot's sensing-limited cell (integration domain frozen at the current step),
input effort cost, hard linearized obstacle-avoidance constraints softened by
a heavily penalized emergency slack, and per-step human chance constraints
reformulated through the Mahalanobis distance and relaxed by slack variables
whose weight decays linearly along the horizon.

The avoidance constraints are nonconvex in position, so the program is solved
by successive linearization: states are eliminated by chaining one-step affine
models along a warm-started nominal trajectory and each convex subproblem is
handed to an interior-point QP solver.  Because squared distances are convex,
their linearizations are global minorants and the linearized feasible set is
an inner (safe) approximation of the true one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import clarabel
import numpy as np
import scipy.sparse as sp

from .geometry import MASS_EPSILON, CellMoments, cell_moments, limited_voronoi_cell
from .prediction import PredictorConfig, estimate_heading, predict

log = logging.getLogger(__name__)


@dataclass
class MpcConfig:
    horizon: int = 10
    dt: float = 0.1
    input_cost: np.ndarray = None          # 2x2 SPD weight on u (default 0.1*I)
    safety_distance: float = 0.5
    risk_level: float = 0.1
    slack_weight: float = 100.0            # initial human-slack weight Omega
    emergency_factor: float = 1e3          # emergency weight = factor * Omega
    u_min: np.ndarray = None               # default (-1.5, -1.5)
    u_max: np.ndarray = None
    position_bounds: tuple | None = None   # (xmin, xmax, ymin, ymax); None = unbounded
    velocity_bounds: tuple | None = None   # (vmin, vmax) scalars, double integrator only
    sqp_iters: int = 3
    grid_res: float = 0.1
    k_gain: float = 0.8                    # Lloyd-equivalent gain, diagnostics only
    ball_vertices: int = 32
    mass_epsilon: float = MASS_EPSILON
    avoid_neighbors: bool = True
    qp_eps: float = 1e-8               # interior-point tolerance (KKT contract: 1e-6)
    constraint_tol: float = 1e-6

    def __post_init__(self):
        self.input_cost = (0.1 * np.eye(2) if self.input_cost is None
                           else np.asarray(self.input_cost, dtype=float).reshape(2, 2))
        self.u_min = (np.full(2, -1.5) if self.u_min is None
                      else np.asarray(self.u_min, dtype=float).reshape(2))
        self.u_max = (np.full(2, 1.5) if self.u_max is None
                      else np.asarray(self.u_max, dtype=float).reshape(2))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0.0 <= self.risk_level < 1.0):
            raise ValueError("risk_level must lie in [0, 1)")
        if self.safety_distance <= 0:
            raise ValueError("safety_distance must be positive")
        if np.any(np.linalg.eigvalsh(self.input_cost) <= 0):
            raise ValueError("input_cost must be positive definite")
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min must not exceed u_max")

    @property
    def emergency_weight(self):
        return self.emergency_factor * self.slack_weight


@dataclass
class CostTerms:
    coverage: float
    control: float
    slack: float
    emergency: float

    @property
    def total(self):
        return self.coverage + self.control + self.slack + self.emergency


@dataclass
class MpcSolution:
    inputs: np.ndarray          # (T, 2)
    states: np.ndarray          # (T, n): predicted x^1 .. x^T
    slacks: np.ndarray          # (n_humans, T) human-constraint slack values
    cost: CostTerms
    status: str                 # solved | max-iters | degraded
    sqp_iterations: int = 0
    qp_iterations: int = 0
    kkt_residual: float = 0.0


@dataclass
class AvoidanceCircle:
    """Keep-out disc: the robot position must stay at least ``clearance`` from
    ``center`` (obstacle clearance = safety distance + obstacle radius)."""
    center: np.ndarray
    clearance: float
    kind: str = "obstacle"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)


@dataclass
class CoverageQuadratic:
    """Per-step coverage cost J(p) = const - 2 s.p + m |p|^2 from cell moments.

    Identical, by construction, to the midpoint quadrature of
    integral |q - p|^2 phi(q) dq over the same grid points.
    """
    mass: float
    first_moment: np.ndarray
    constant: float
    empty: bool

    @classmethod
    def from_moments(cls, m: CellMoments):
        if m.empty:
            return cls(0.0, np.zeros(2), 0.0, True)
        return cls(m.mass, np.asarray(m.first_moment, dtype=float), m.second_moment, False)

    def value(self, p) -> float:
        if self.empty:
            return 0.0
        p = np.asarray(p, dtype=float)
        return self.constant - 2.0 * float(self.first_moment @ p) + self.mass * float(p @ p)

    def gradient(self, p) -> np.ndarray:
        if self.empty:
            return np.zeros(2)
        return 2.0 * self.mass * np.asarray(p, dtype=float) - 2.0 * self.first_moment


def slack_weights(omega: float, horizon: int) -> np.ndarray:
    """Linearly decaying weights w_k = Omega (1 - k/T), k = 0..T-1."""
    k = np.arange(horizon)
    return omega * (1.0 - k / horizon)


def mahalanobis_sq(p, mean, cov) -> float:
    d = np.asarray(p, dtype=float) - np.asarray(mean, dtype=float)
    return float(d @ np.linalg.solve(np.asarray(cov, dtype=float), d))


def chance_constraint_rhs(cov, risk_level: float, safety_distance: float) -> float:
    """Squared-Mahalanobis threshold enforcing the collision chance bound.

    Returns -2 ln( sqrt(det(2 pi Sigma)) * alpha / (pi D_s^2) ).  Non-positive
    values mean the constraint is vacuous (the Gaussian is already too diffuse
    for the bound to bind).
    """
    if not (0.0 < risk_level < 1.0):
        raise ValueError("risk_level must lie in (0, 1)")
    if safety_distance <= 0:
        raise ValueError("safety_distance must be positive")
    cov = np.asarray(cov, dtype=float)
    arg = np.sqrt(np.linalg.det(2.0 * np.pi * cov)) * risk_level / (np.pi * safety_distance ** 2)
    return -2.0 * float(np.log(arg))


def _rollout(model, x0, inputs, dt):
    states = np.empty((len(inputs) + 1, model.state_dim))
    states[0] = x0
    for k, u in enumerate(inputs):
        states[k + 1] = model.step(states[k], u, dt)
    return states


def _sensitivities(model, states, inputs, dt):
    """Chain per-step affine models: x^k = F_k U + f_k with U the stacked inputs."""
    T = len(inputs)
    n = model.state_dim
    F = np.zeros((T + 1, n, 2 * T))
    f = np.zeros((T + 1, n))
    f[0] = states[0]
    for k in range(T):
        aff = model.linearize(states[k], inputs[k], dt)
        F[k + 1] = aff.A @ F[k]
        F[k + 1][:, 2 * k:2 * k + 2] += aff.B
        f[k + 1] = aff.A @ f[k] + aff.c
    return F, f


@dataclass
class QpSubproblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    n_inputs: int
    human_rows: list            # (human_index, step, slack_var_index)
    circle_rows: list           # (circle_index, step, eps_var_index)
    eps_scale: float = 1.0      # emergency slack stored as eps_hat = eps * scale
    delta_scales: np.ndarray = None  # per human-slack-column scale, same substitution


def horizon_reach(model, x0, cfg: MpcConfig) -> float:
    """Upper bound on how far the position can travel over the horizon."""
    span = cfg.horizon * cfg.dt
    if model.state_dim >= 4:  # inputs are accelerations
        v0 = float(np.linalg.norm(np.asarray(x0, dtype=float)[2:4]))
        a_max = float(np.linalg.norm(np.maximum(np.abs(cfg.u_min), np.abs(cfg.u_max))))
        return v0 * span + 0.5 * a_max * span ** 2
    v_max = float(np.linalg.norm(np.maximum(np.abs(cfg.u_min), np.abs(cfg.u_max))))
    return v_max * span


def _deviation_profile(model, cfg: MpcConfig) -> np.ndarray:
    """Per-step bound on how far positions can stray from the nominal rollout
    under any admissible input change; used to prune provably inactive rows."""
    T = cfg.horizon
    k = np.arange(T + 1, dtype=float)
    diam = float(np.linalg.norm(cfg.u_max - cfg.u_min))
    if model.state_dim >= 4:  # acceleration inputs integrate twice
        return 0.5 * diam * (k * cfg.dt) ** 2
    if model.state_dim == 3:  # speed bounded by the input box either way
        v_max = 2.0 * max(abs(cfg.u_min[0]), abs(cfg.u_max[0]))
        return v_max * k * cfg.dt
    return diam * k * cfg.dt


def build_problem(x0, model, moments, circles, predictions, nominal_inputs,
                  cfg: MpcConfig) -> QpSubproblem:
    """Assemble the convex subproblem around a nominal input sequence.

    Decision variables are the stacked inputs, one slack per active human
    constraint and one emergency slack per avoidance-circle constraint.  States
    are eliminated through the chained linearization, and every step-0 term is
    constant (the current state is not a decision), so constraints start at
    step 1.
    """
    T = cfg.horizon
    nominal_inputs = np.asarray(nominal_inputs, dtype=float).reshape(T, 2)
    x0 = np.asarray(x0, dtype=float)
    states = _rollout(model, x0, nominal_inputs, cfg.dt)
    F, f = _sensitivities(model, states, nominal_inputs, cfg.dt)
    E = F[:, :2, :]
    e = f[:, :2]
    nu = 2 * T

    cov = moments if isinstance(moments, CoverageQuadratic) else CoverageQuadratic.from_moments(moments)
    weights = slack_weights(cfg.slack_weight, T)
    # slack variables are carried in penalty-scaled units (exact substitution,
    # mapped back on extraction) so the cost vector stays well equilibrated
    eps_scale = max(1.0, cfg.emergency_weight / (10.0 * max(cfg.slack_weight, 1.0)))

    margin = 0.2
    dev = _deviation_profile(model, cfg)
    human_rows = []
    var = nu
    rhs_cache = {}
    for h, pred in enumerate(predictions):
        for k in range(1, T):
            rhs = chance_constraint_rhs(pred.covariances[k], cfg.risk_level, cfg.safety_distance)
            if rhs <= 0.0:
                continue  # vacuous: already satisfied everywhere
            lam_max = float(np.max(np.linalg.eigvalsh(pred.covariances[k])))
            gap = np.linalg.norm(states[k][:2] - pred.means[k]) - np.sqrt(rhs * lam_max)
            if gap > dev[k] + margin:
                continue  # unreachable at this step for any admissible inputs
            rhs_cache[(h, k)] = rhs
            human_rows.append((h, k, var))
            var += 1
    n_delta = var - nu
    circle_rows = []
    for c, circ in enumerate(circles):
        for k in range(1, T):
            gap = np.linalg.norm(states[k][:2] - circ.center) - circ.clearance
            if gap > dev[k] + margin:
                continue
            circle_rows.append((c, k, var))
            var += 1
    n_eps = var - nu - n_delta
    nz = var

    # --- cost ---
    P = np.zeros((nz, nz))
    q = np.zeros(nz)
    R2 = 2.0 * cfg.input_cost
    for k in range(T):
        P[2 * k:2 * k + 2, 2 * k:2 * k + 2] += R2
    if not cov.empty:
        for k in range(1, T):
            P[:nu, :nu] += 2.0 * cov.mass * E[k].T @ E[k]
            q[:nu] += (2.0 * cov.mass * e[k] - 2.0 * cov.first_moment) @ E[k]
    delta_scales = np.array([max(1.0, weights[k] / 10.0) for (_, k, _) in human_rows])
    for i, (h, k, v) in enumerate(human_rows):
        q[v] = weights[k] / delta_scales[i]
    for (c, k, v) in circle_rows:
        q[v] = cfg.emergency_weight / eps_scale

    # --- constraints ---
    rows_A, rows_l, rows_u = [], [], []

    def add(row, lo, hi):
        rows_A.append(row)
        rows_l.append(lo)
        rows_u.append(hi)

    for k in range(T):  # input bounds
        for j in range(2):
            row = np.zeros(nz)
            row[2 * k + j] = 1.0
            add(row, cfg.u_min[j], cfg.u_max[j])
    for v in range(nu, nz):  # slack non-negativity
        row = np.zeros(nz)
        row[v] = 1.0
        add(row, 0.0, np.inf)
    if cfg.position_bounds is not None:
        xmin, xmax, ymin, ymax = cfg.position_bounds
        p0 = e[0]
        lo = np.minimum([xmin, ymin], p0)  # keep feasible if currently outside
        hi = np.maximum([xmax, ymax], p0)
        for k in range(1, T):
            for j in range(2):
                row = np.zeros(nz)
                row[:nu] = E[k][j]
                add(row, lo[j] - e[k][j], hi[j] - e[k][j])
    if cfg.velocity_bounds is not None and model.state_dim >= 4:
        vmin, vmax = cfg.velocity_bounds
        for k in range(1, T):
            for j in (2, 3):
                row = np.zeros(nz)
                row[:nu] = F[k][j]
                add(row, vmin - f[k][j], vmax - f[k][j])
    for (c, k, v) in circle_rows:
        circ = circles[c]
        diff = states[k][:2] - circ.center
        g = 2.0 * diff
        row = np.zeros(nz)
        row[:nu] = g @ E[k]
        row[v] = 1.0 / eps_scale
        add(row, circ.clearance ** 2 - float(diff @ diff) + float(g @ (states[k][:2] - e[k])), np.inf)
    for i, (h, k, v) in enumerate(human_rows):
        pred = predictions[h]
        diff = states[k][:2] - pred.means[k]
        grad = 2.0 * np.linalg.solve(pred.covariances[k], diff)
        dsq = float(diff @ grad) / 2.0
        row = np.zeros(nz)
        row[:nu] = grad @ E[k]
        row[v] = 1.0 / delta_scales[i]
        add(row, rhs_cache[(h, k)] - dsq + float(grad @ (states[k][:2] - e[k])), np.inf)

    A = sp.csc_matrix(np.asarray(rows_A)) if rows_A else sp.csc_matrix((0, nz))
    return QpSubproblem(sp.csc_matrix(P), q, A, np.asarray(rows_l), np.asarray(rows_u),
                        nu, human_rows, circle_rows, eps_scale, delta_scales)


def solve_subproblem(qp: QpSubproblem, cfg: MpcConfig):
    """Solve one convex subproblem with the interior-point backend.

    Two-sided rows l <= Az <= u are rewritten as [A; -A] z <= [u; -l] over the
    nonnegative cone.  Returns (z, status, iterations, kkt_residual) with z None
    on failure.  Single-threaded for run determinism.
    """
    mask_u = np.isfinite(qp.u)
    mask_l = np.isfinite(qp.l)
    A_cone = sp.vstack([qp.A[mask_u], -qp.A[mask_l]], format="csc")
    b = np.concatenate([qp.u[mask_u], -qp.l[mask_l]])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_threads = 1
    settings.tol_gap_abs = cfg.qp_eps
    settings.tol_gap_rel = cfg.qp_eps
    settings.tol_feas = cfg.qp_eps
    solver = clarabel.DefaultSolver(qp.P, qp.q, A_cone, b,
                                    [clarabel.NonnegativeConeT(len(b))], settings)
    sol = solver.solve()
    status = str(sol.status)
    kkt = max(abs(float(sol.r_prim)), abs(float(sol.r_dual)))
    if status in ("Solved", "AlmostSolved") and sol.x is not None:
        return np.asarray(sol.x), status, int(sol.iterations), kkt
    if status == "MaxIterations" and sol.x is not None:
        return np.asarray(sol.x), status, int(sol.iterations), kkt
    return None, status, int(sol.iterations), kkt


def _true_terms(model, x0, inputs, cov, circles, predictions, cfg):
    """Evaluate the nonlinear cost and constraint residuals along a rollout."""
    T = cfg.horizon
    states = _rollout(model, x0, inputs, cfg.dt)
    positions = np.array([model.position(s) for s in states])
    weights = slack_weights(cfg.slack_weight, T)

    coverage = sum(cov.value(positions[k]) for k in range(T))
    control = float(sum(u @ cfg.input_cost @ u for u in inputs))
    slacks = np.zeros((len(predictions), T))
    for h, pred in enumerate(predictions):
        for k in range(1, T):
            rhs = chance_constraint_rhs(pred.covariances[k], cfg.risk_level, cfg.safety_distance)
            if rhs <= 0.0:
                continue
            slacks[h, k] = max(0.0, rhs - mahalanobis_sq(positions[k], pred.means[k],
                                                         pred.covariances[k]))
    slack_cost = float(np.sum(slacks * weights[None, :]))
    emergency = 0.0
    max_violation = 0.0
    for circ in circles:
        d2 = np.einsum("ij,ij->i", positions[1:T] - circ.center, positions[1:T] - circ.center)
        viol = np.maximum(0.0, circ.clearance ** 2 - d2)
        emergency += float(np.sum(viol))
        if len(viol):
            max_violation = max(max_violation, float(np.max(viol)))
    terms = CostTerms(coverage, control, slack_cost, cfg.emergency_weight * emergency)
    return terms, states[1:], slacks, max_violation


def solve(x0, model, moments, circles, predictions, cfg: MpcConfig,
          warm: MpcSolution | None = None) -> MpcSolution:
    """Successive linearization around a warm-started nominal; best iterate wins."""
    T = cfg.horizon
    x0 = np.asarray(x0, dtype=float)
    cov = moments if isinstance(moments, CoverageQuadratic) else CoverageQuadratic.from_moments(moments)
    # circles the horizon provably cannot touch add work, not safety
    p0 = x0[:2]
    reach = horizon_reach(model, x0, cfg) + 0.5
    circles = [c for c in circles
               if np.linalg.norm(c.center - p0) <= c.clearance + reach]
    if warm is not None and warm.inputs.shape == (T, 2):
        nominal = np.vstack([warm.inputs[1:], warm.inputs[-1:]])  # time-shifted
    else:
        nominal = np.zeros((T, 2))

    best = None
    total_qp_iters = 0
    kkt = 0.0
    hit_max_iters = False

    for it in range(cfg.sqp_iters):
        qp = build_problem(x0, model, cov, circles, predictions, nominal, cfg)
        z, status, iters, kkt = solve_subproblem(qp, cfg)
        total_qp_iters += iters
        if z is None or np.any(np.isnan(z)):
            log.warning("QP solver failed (%s); falling back to zero input", status)
            break
        if status != "Solved":
            hit_max_iters = True

        inputs = np.clip(z[:2 * T].reshape(T, 2), cfg.u_min, cfg.u_max)
        qp_eps = (float(np.max(z[2 * T + len(qp.human_rows):])) / qp.eps_scale
                  if qp.circle_rows else 0.0)
        terms, states, slacks, true_viol = _true_terms(model, x0, inputs, cov, circles,
                                                       predictions, cfg)
        cand = (terms.total, inputs, states, slacks, terms, max(qp_eps, true_viol), it + 1)
        if best is None or cand[0] < best[0]:
            best = cand
        converged = float(np.max(np.abs(inputs - nominal))) < 1e-8
        nominal = inputs
        if converged:  # next subproblem would be identical
            break

    if best is None:
        inputs = np.zeros((T, 2))
        terms, states, slacks, true_viol = _true_terms(model, x0, inputs, cov, circles,
                                                       predictions, cfg)
        return MpcSolution(inputs, states, slacks, terms, "degraded",
                           sqp_iterations=0, qp_iterations=total_qp_iters, kkt_residual=kkt)

    _, inputs, states, slacks, terms, emergency, iters = best
    status = "degraded" if emergency > cfg.constraint_tol else (
        "max-iters" if hit_max_iters else "solved")
    return MpcSolution(inputs, states, slacks, terms, status,
                       sqp_iterations=iters, qp_iterations=total_qp_iters,
                       kkt_residual=kkt)


class HmpccController:
    """Decentralized per-robot controller; holds the warm-start cache."""

    def __init__(self, model, env, density, cfg: MpcConfig,
                 predictor: PredictorConfig | None = None):
        self.model = model
        self.env = env
        self.density = density
        if cfg.position_bounds is None:
            # inset so linearization mismatch never strands a robot on the rim
            xmin, xmax, ymin, ymax = env.bbox
            m = 0.15
            cfg = replace(cfg, position_bounds=(xmin + m, xmax - m, ymin + m, ymax - m))
        self.cfg = cfg
        self.predictor = predictor or PredictorConfig()
        self._warm = None
        self._headings = {}

    def control(self, view):
        """One receding-horizon step from a sensed view; returns (u0, solution)."""
        cfg = self.cfg
        p = self.model.position(view.state)
        cell = limited_voronoi_cell(p, view.neighbors, self.env, view.sensing_range / 2.0,
                                    cfg.ball_vertices)
        moments = cell_moments(cell, self.density, cfg.grid_res, cfg.mass_epsilon)
        predictions = []
        for tr in view.tracks:
            fb = self._headings.get(tr.track_id, 0.0)
            self._headings[tr.track_id] = estimate_heading(tr, self.predictor.window, fb)
            predictions.append(predict(tr, cfg.horizon, cfg.dt, self.predictor.sigma0,
                                       self.predictor.qnoise, self.predictor.window, fb))
        circles = [AvoidanceCircle(ob.center, cfg.safety_distance + ob.radius, "obstacle")
                   for ob in view.obstacles]
        if cfg.avoid_neighbors:
            circles += [AvoidanceCircle(nb, cfg.safety_distance, "neighbor")
                        for nb in np.atleast_2d(view.neighbors)] if len(view.neighbors) else []
        sol = solve(view.state, self.model, moments, circles, predictions, cfg,
                    warm=self._warm)
        self._warm = sol
        return sol.inputs[0].copy(), sol
