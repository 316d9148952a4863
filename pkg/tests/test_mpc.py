import numpy as np
import pytest

from hmpcc.density import random_gmm
from hmpcc.dynamics import make_model
from hmpcc.geometry import Environment, cell_moments, limited_voronoi_cell, \
    polygon_grid_points
from hmpcc.mpc import (AvoidanceCircle, CoverageQuadratic, MpcConfig, build_problem,
                       chance_constraint_rhs, mahalanobis_sq, slack_weights, solve)
from hmpcc.prediction import HumanPrediction

ARENA = Environment.rectangle(-5, 5, -5, 5)


def make_cfg(**kw):
    base = dict(input_cost=1e-6 * np.eye(2), u_min=np.full(2, -1e3),
                u_max=np.full(2, 1e3), position_bounds=ARENA.bbox)
    base.update(kw)
    return MpcConfig(**base)


def moments_at(p, gmm, grid_res=0.1, r=2.5):
    cell = limited_voronoi_cell(p, [], ARENA, r)
    return cell_moments(cell, gmm, grid_res)


# ------------------------------------------------------------- closed forms

def test_chance_rhs_reference_value():
    rhs = chance_constraint_rhs(0.01 * np.eye(2), 0.1, 0.5)
    assert rhs == pytest.approx(9.6566, abs=1e-3)


def test_chance_rhs_alpha_doubling_identity():
    a = chance_constraint_rhs(0.02 * np.eye(2), 0.1, 0.5)
    b = chance_constraint_rhs(0.02 * np.eye(2), 0.2, 0.5)
    assert a - b == pytest.approx(2.0 * np.log(2.0), rel=1e-12)


def test_chance_rhs_becomes_vacuous_for_diffuse_gaussians():
    vals = [chance_constraint_rhs(s * np.eye(2), 0.1, 0.5) for s in (0.01, 0.1, 1.0, 10.0)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] <= 0.0


def test_mahalanobis_cases():
    p = np.array([1.0, 2.0])
    assert mahalanobis_sq(p, p, np.eye(2)) == 0.0
    assert mahalanobis_sq((3.0, 0.0), (0.0, 4.0), np.eye(2)) == pytest.approx(25.0)
    assert mahalanobis_sq((2.0, 0.0), (0.0, 0.0), np.diag([4.0, 1.0])) == pytest.approx(1.0)


def test_slack_weights_decay():
    w = slack_weights(100.0, 10)
    assert np.all(np.diff(w) < 0)
    assert w[-1] == pytest.approx(100.0 / 10)
    assert w[0] == pytest.approx(100.0)


# ------------------------------------------------------------- coverage cost

def test_coverage_cost_vertex_at_centroid():
    gmm = random_gmm(2, 3, (-4, 4, -4, 4), sigma_range=(1.0, 2.0))
    mom = moments_at(np.array([0.5, -1.0]), gmm)
    quad = CoverageQuadratic.from_moments(mom)
    c = mom.centroid
    v_at_c = quad.value(c)
    assert v_at_c == pytest.approx(quad.constant - mom.mass * float(c @ c), rel=1e-12)
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert quad.value(c + rng.uniform(-1, 1, 2)) >= v_at_c


def test_coverage_cost_plugin_value():
    quad = CoverageQuadratic(1.0, np.array([0.5, 0.5]), 0.37, False)
    assert quad.value((0.0, 0.0)) == pytest.approx(0.37)


def test_coverage_cost_equals_direct_quadrature():
    rng = np.random.default_rng(9)
    for seed in range(25):
        gmm = random_gmm(seed, rng.integers(1, 5), (-4, 4, -4, 4), sigma_range=(0.8, 2.0))
        p0 = rng.uniform(-4, 4, 2)
        nbs = rng.uniform(-4.5, 4.5, size=(rng.integers(0, 3), 2))
        cell = limited_voronoi_cell(p0, nbs, ARENA, 2.5)
        mom = cell_moments(cell, gmm, 0.1)
        if mom.empty:
            continue
        quad = CoverageQuadratic.from_moments(mom)
        pts = polygon_grid_points(cell.polygon, 0.1)
        phi = np.asarray(gmm(pts))
        p = rng.uniform(-5, 5, 2)
        direct = 0.01 * float(phi @ np.einsum("ij,ij->i", pts - p, pts - p))
        assert quad.value(p) == pytest.approx(direct, rel=1e-9)


def test_coverage_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    gmm = random_gmm(4, 3, (-4, 4, -4, 4), sigma_range=(1.0, 2.0))
    for _ in range(20):
        mom = moments_at(rng.uniform(-4, 4, 2), gmm)
        if mom.empty:
            continue
        quad = CoverageQuadratic.from_moments(mom)
        p = rng.uniform(-4, 4, 2)
        g = quad.gradient(p)
        assert np.allclose(g, -2.0 * mom.mass * (mom.centroid - p), rtol=1e-12)
        h = 1e-3  # J is exactly quadratic: central differences are exact
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = h
            fd = (quad.value(p + dp) - quad.value(p - dp)) / (2 * h)
            assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-8)


# ------------------------------------------------------------- subproblem

def test_unconstrained_first_step_reaches_centroid():
    gmm = random_gmm(8, 2, (-3, 3, -3, 3), sigma_range=(1.2, 2.0))
    model = make_model("single_integrator")
    p0 = np.array([-2.0, 1.5])
    mom = moments_at(p0, gmm)
    cfg = make_cfg(input_cost=1e-9 * np.eye(2))
    sol = solve(p0, model, mom, [], [], cfg)
    assert sol.status == "solved"
    assert np.allclose(sol.states[0], mom.centroid, atol=1e-4)


def test_blocking_obstacle_pushes_laterally():
    model = make_model("single_integrator")
    p0 = np.zeros(2)
    # centroid straight ahead, obstacle slightly above the segment
    quad = CoverageQuadratic(1.0, np.array([2.0, 0.0]), 4.0, False)
    circles = [AvoidanceCircle(np.array([0.6, 0.05]), 0.5)]
    cfg = make_cfg(u_min=np.full(2, -2.0), u_max=np.full(2, 2.0))
    sol = solve(p0, model, quad, circles, [], cfg)
    assert sol.inputs[0][1] < -1e-6  # deviates away from the obstacle side
    qp = build_problem(p0, model, quad, circles, [], np.zeros((10, 2)), cfg)
    assert len(qp.circle_rows) == 9


def test_vacuous_human_constraint_matches_human_free():
    model = make_model("single_integrator")
    gmm = random_gmm(5, 2, (-3, 3, -3, 3), sigma_range=(1.2, 2.0))
    p0 = np.array([1.0, -1.0])
    mom = moments_at(p0, gmm)
    cfg = make_cfg()
    diffuse = HumanPrediction(np.tile([0.0, 0.0], (10, 1)),
                              np.tile(10.0 * np.eye(2), (10, 1, 1)))
    assert chance_constraint_rhs(diffuse.covariances[1], cfg.risk_level,
                                 cfg.safety_distance) <= 0
    sol_free = solve(p0, model, mom, [], [], cfg)
    sol_vac = solve(p0, model, mom, [], [diffuse], cfg)
    assert np.allclose(sol_free.inputs, sol_vac.inputs, atol=1e-9)
    qp = build_problem(p0, model, mom, [], [diffuse], np.zeros((10, 2)), cfg)
    assert qp.human_rows == []


# ------------------------------------------------------------- full solve

def test_first_input_aligns_with_lloyd_direction():
    model = make_model("single_integrator")
    rng = np.random.default_rng(0)
    hits = 0
    for seed in range(20):
        gmm = random_gmm(seed, 3, (-4, 4, -4, 4), sigma_range=(1.0, 2.0))
        p0 = rng.uniform(-4.5, 4.5, 2)
        mom = moments_at(p0, gmm)
        if mom.empty or np.linalg.norm(mom.centroid - p0) < 1e-3:
            hits += 1
            continue
        sol = solve(p0, model, mom, [], [], make_cfg())
        d = mom.centroid - p0
        cos = float(sol.inputs[0] @ d / (np.linalg.norm(sol.inputs[0]) * np.linalg.norm(d)))
        if cos >= 0.999:
            hits += 1
    assert hits >= 19


def test_stationary_at_centroid():
    gmm = random_gmm(3, 1, (-1, 1, -1, 1), sigma_range=(1.0, 1.0))
    model = make_model("single_integrator")
    # frozen integration domain: the robot sits exactly at the centroid of the
    # cell moments the controller was handed
    mom = moments_at(np.zeros(2), gmm)
    sol = solve(mom.centroid, model, mom, [], [], make_cfg())
    assert np.linalg.norm(sol.inputs[0]) <= 1e-5


def test_surrounded_robot_degrades_and_holds():
    model = make_model("single_integrator")
    # robot already at its centroid but trapped: every ring constraint is
    # violated at the current state, so only the emergency slack keeps the
    # subproblem feasible
    quad = CoverageQuadratic(1.0, np.zeros(2), 0.0, False)
    ring = [AvoidanceCircle(0.3 * np.array([np.cos(a), np.sin(a)]), 0.5)
            for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
    cfg = make_cfg(u_min=np.full(2, -1.5), u_max=np.full(2, 1.5))
    sol = solve(np.zeros(2), model, quad, ring, [], cfg)
    assert sol.status == "degraded"
    assert sol.cost.emergency > 0.0
    assert np.linalg.norm(sol.states[0][:2]) <= 0.05


def test_warm_start_iterations_not_worse():
    model = make_model("single_integrator")
    rng = np.random.default_rng(17)
    cold_iters, warm_iters = [], []
    for seed in range(20):
        gmm = random_gmm(seed, 2, (-3, 3, -3, 3), sigma_range=(1.0, 2.0))
        p0 = rng.uniform(-3, 3, 2)
        mom = moments_at(p0, gmm)
        # a blocking circle ahead of the robot, outside its current clearance
        ang = rng.uniform(0, 2 * np.pi)
        center = p0 + rng.uniform(0.7, 1.2) * np.array([np.cos(ang), np.sin(ang)])
        circles = [AvoidanceCircle(center, 0.5)]
        cfg = make_cfg(u_min=np.full(2, -1.5), u_max=np.full(2, 1.5))
        cold = solve(p0, model, mom, circles, [], cfg)
        warm = solve(p0, model, mom, circles, [], cfg, warm=cold)
        assert warm.kkt_residual <= max(cold.kkt_residual, 1e-6)
        cold_iters.append(cold.qp_iterations)
        warm_iters.append(warm.qp_iterations)
    assert np.mean(warm_iters) <= np.mean(cold_iters)


def test_inputs_respect_bounds_and_slacks_nonnegative():
    model = make_model("unicycle")
    gmm = random_gmm(6, 3, (-4, 4, -4, 4), sigma_range=(1.0, 1.8))
    p0 = np.array([0.0, 0.0, 0.3])
    mom = moments_at(p0[:2], gmm)
    pred = HumanPrediction(np.tile([0.8, 0.2], (10, 1)),
                           np.stack([(0.01 + 0.01 * k) * np.eye(2) for k in range(10)]))
    cfg = MpcConfig(u_min=np.array([-1.5, -2.0]), u_max=np.array([1.5, 2.0]),
                    position_bounds=ARENA.bbox)
    sol = solve(p0, model, mom, [AvoidanceCircle(np.array([1.0, 1.0]), 0.5)], [pred], cfg)
    assert np.all(sol.inputs >= cfg.u_min - 1e-12)
    assert np.all(sol.inputs <= cfg.u_max + 1e-12)
    assert np.all(sol.slacks >= 0.0)
    assert sol.cost.total == pytest.approx(sol.cost.coverage + sol.cost.control
                                           + sol.cost.slack + sol.cost.emergency)


def test_chance_bound_statistical_smoke():
    # small version of the acceptance check, in the bound's validity regime
    rng = np.random.default_rng(23)
    Ds, alpha = 0.5, 0.1
    for _ in range(10):
        lam = rng.uniform(0.75 ** 2, 1.05 ** 2, 2)
        ang = rng.uniform(0, np.pi)
        V = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        cov = V @ np.diag(lam) @ V.T
        rhs = chance_constraint_rhs(cov, alpha, Ds)
        assert rhs > 0
        mu = rng.uniform(-1, 1, 2)
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        dm = np.sqrt(rhs) + rng.uniform(0, 1.0)
        scale = np.sqrt(float(direction @ np.linalg.solve(cov, direction)))
        p = mu + (dm / scale) * direction
        assert mahalanobis_sq(p, mu, cov) >= rhs - 1e-9
        xs = rng.multivariate_normal(mu, cov, size=20000)
        hit = float(np.mean(np.linalg.norm(xs - p, axis=1) < Ds))
        stderr = np.sqrt(max(hit, 1e-4) * (1 - max(hit, 1e-4)) / 20000)
        assert hit <= alpha + 3 * stderr
