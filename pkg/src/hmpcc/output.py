"""Run serialization: trajectory tables, JSON logs, summaries, SVG snapshots.

All writers are deterministic for fixed inputs: no timestamps, sorted keys,
and 9-significant-digit floats in the human-readable tables.  Files are
written atomically (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np
import yaml

from .baseline import BaselineConfig, RepulsionParams
from .density import GaussianComponent, GaussianMixture
from .geometry import Environment
from .mpc import MpcConfig, chance_constraint_rhs
from .prediction import PredictorConfig
from .sim import HumanSpec, Outcome, RobotSpec, Scenario, SimLog


def fmt(x) -> str:
    return format(float(x), ".9g")


def write_atomic(path, text: str):
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- tables

def trajectory_table(log: SimLog) -> str:
    """One row per (time step, agent): robots first, then humans."""
    lines = ["t,id,kind,x,y,extra,ux,uy,status"]
    scen = log.scenario
    for s, t in enumerate(log.times):
        for i, spec in enumerate(scen.robots):
            state = log.robot_states[i][s]
            extra = ";".join(fmt(v) for v in state[2:])
            diag = log.diagnostics[s][i]
            status = diag["status"] if diag else ""
            lines.append(",".join([fmt(t), f"r{i}", spec.model, fmt(state[0]), fmt(state[1]),
                                   extra, fmt(log.robot_inputs[s, i, 0]),
                                   fmt(log.robot_inputs[s, i, 1]), status]))
        for j in range(len(scen.humans)):
            x, y, th = log.human_states[s, j]
            lines.append(",".join([fmt(t), f"h{j}", "human", fmt(x), fmt(y), fmt(th),
                                   "", "", ""]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- JSON logs

def _mpc_dict(cfg: MpcConfig) -> dict:
    return {"horizon": cfg.horizon, "dt": cfg.dt,
            "input_cost": np.asarray(cfg.input_cost).tolist(),
            "safety_distance": cfg.safety_distance, "risk_level": cfg.risk_level,
            "slack_weight": cfg.slack_weight, "emergency_factor": cfg.emergency_factor,
            "u_min": cfg.u_min.tolist(), "u_max": cfg.u_max.tolist(),
            "position_bounds": list(cfg.position_bounds) if cfg.position_bounds else None,
            "velocity_bounds": list(cfg.velocity_bounds) if cfg.velocity_bounds else None,
            "sqp_iters": cfg.sqp_iters, "grid_res": cfg.grid_res, "k_gain": cfg.k_gain,
            "ball_vertices": cfg.ball_vertices, "avoid_neighbors": cfg.avoid_neighbors}


def _baseline_dict(cfg: BaselineConfig) -> dict:
    return {"centroid_gain": cfg.centroid_gain, "repulsion_gain": cfg.repulsion.gain,
            "influence_radius": cfg.repulsion.influence_radius,
            "heading_gain": cfg.heading_gain, "velocity_gain": cfg.velocity_gain,
            "u_min": cfg.u_min.tolist(), "u_max": cfg.u_max.tolist(),
            "grid_res": cfg.grid_res, "ball_vertices": cfg.ball_vertices}


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "boundary": s.env.boundary.tolist(),
        "obstacles": [{"center": ob.center.tolist(), "radius": ob.radius}
                      for ob in s.env.obstacles],
        "density": [{"weight": c.weight, "mean": c.mean.tolist(),
                     "covariance": c.covariance.tolist()} for c in s.density.components],
        "robots": [{"model": r.model, "state": r.state.tolist()} for r in s.robots],
        "humans": [{"position": h.position.tolist(), "heading": h.heading,
                    "speed": h.speed} for h in s.humans],
        "controller": s.controller,
        "mpc": _mpc_dict(s.mpc),
        "baseline": _baseline_dict(s.baseline),
        "predictor": {"window": s.predictor.window, "sigma0": s.predictor.sigma0,
                      "qnoise": s.predictor.qnoise},
        "duration": s.duration, "sensing_range": s.sensing_range, "seed": s.seed,
        "human_sigma": s.human_sigma, "collision_obstacle": s.collision_obstacle,
        "collision_human": s.collision_human, "metrics_grid_res": s.metrics_grid_res,
    }


def scenario_from_dict(d: dict) -> Scenario:
    env = Environment(d["boundary"], [(o["center"], o["radius"]) for o in d["obstacles"]])
    density = GaussianMixture([GaussianComponent(c["weight"], c["mean"], c["covariance"])
                               for c in d["density"]])
    mpc_kw = dict(d["mpc"])
    for key in ("input_cost", "u_min", "u_max"):
        mpc_kw[key] = np.asarray(mpc_kw[key])
    for key in ("position_bounds", "velocity_bounds"):
        mpc_kw[key] = tuple(mpc_kw[key]) if mpc_kw[key] else None
    b = dict(d["baseline"])
    base = BaselineConfig(centroid_gain=b["centroid_gain"],
                          repulsion=RepulsionParams(b["repulsion_gain"],
                                                    b["influence_radius"]),
                          heading_gain=b["heading_gain"], velocity_gain=b["velocity_gain"],
                          u_min=np.asarray(b["u_min"]), u_max=np.asarray(b["u_max"]),
                          grid_res=b["grid_res"], ball_vertices=int(b["ball_vertices"]))
    return Scenario(env=env, density=density,
                    robots=[RobotSpec(r["model"], r["state"]) for r in d["robots"]],
                    humans=[HumanSpec(h["position"], h["heading"], h["speed"])
                            for h in d["humans"]],
                    controller=d["controller"], mpc=MpcConfig(**mpc_kw), baseline=base,
                    predictor=PredictorConfig(**d["predictor"]), duration=d["duration"],
                    sensing_range=d["sensing_range"], seed=d["seed"],
                    human_sigma=d["human_sigma"],
                    collision_obstacle=d["collision_obstacle"],
                    collision_human=d["collision_human"],
                    metrics_grid_res=d["metrics_grid_res"])


def log_to_dict(log: SimLog) -> dict:
    return {
        "seed": log.seed,
        "scenario": scenario_to_dict(log.scenario),
        "times": log.times.tolist(),
        "robot_states": [arr.tolist() for arr in log.robot_states],
        "robot_inputs": log.robot_inputs.tolist(),
        "human_states": log.human_states.tolist(),
        "prediction_means": log.prediction_means.tolist(),
        "prediction_covs": log.prediction_covs.tolist(),
        "planned": [[p.tolist() if p is not None else None for p in step]
                    for step in log.planned],
        "diagnostics": log.diagnostics,
        "metrics": {"H": log.metric_H.tolist(), "Hr": log.metric_Hr.tolist(),
                    "E": log.metric_E.tolist()},
        "min_obstacle_dist": log.min_obstacle_dist.tolist(),
        "min_human_dist": log.min_human_dist.tolist(),
        "events": list(log.events),
        "outcome": {"kind": log.outcome.kind, "agent": log.outcome.agent,
                    "other": log.outcome.other, "time": log.outcome.time},
        "digest": log.digest(),
    }


def log_from_dict(d: dict) -> SimLog:
    scen = scenario_from_dict(d["scenario"])
    return SimLog(
        scenario=scen,
        times=np.asarray(d["times"], dtype=float),
        robot_states=[np.asarray(a, dtype=float) for a in d["robot_states"]],
        robot_inputs=np.asarray(d["robot_inputs"], dtype=float),
        human_states=np.asarray(d["human_states"], dtype=float).reshape(
            len(d["times"]), len(scen.humans), 3),
        prediction_means=np.asarray(d["prediction_means"], dtype=float).reshape(
            len(d["times"]), len(scen.humans), scen.mpc.horizon, 2),
        prediction_covs=np.asarray(d["prediction_covs"], dtype=float).reshape(
            len(d["times"]), len(scen.humans), scen.mpc.horizon, 2, 2),
        planned=[[np.asarray(p, dtype=float) if p is not None else None for p in step]
                 for step in d["planned"]],
        diagnostics=d["diagnostics"],
        metric_H=np.asarray(d["metrics"]["H"], dtype=float),
        metric_Hr=np.asarray(d["metrics"]["Hr"], dtype=float),
        metric_E=np.asarray(d["metrics"]["E"], dtype=float),
        min_obstacle_dist=np.asarray(d["min_obstacle_dist"], dtype=float),
        min_human_dist=np.asarray(d["min_human_dist"], dtype=float),
        events=list(d["events"]),
        outcome=Outcome(**d["outcome"]),
    )


def log_json(log: SimLog) -> str:
    return json.dumps(log_to_dict(log), sort_keys=True, separators=(",", ":")) + "\n"


def load_log(path) -> SimLog:
    with open(path, "r", encoding="utf-8") as fh:
        return log_from_dict(json.load(fh))


# ---------------------------------------------------------------- summaries

class _NineDigitDumper(yaml.SafeDumper):
    pass


_NineDigitDumper.add_representer(
    float, lambda d, v: d.represent_scalar("tag:yaml.org,2002:float", fmt(v)))


def summary_text(doc: dict) -> str:
    return yaml.dump(doc, Dumper=_NineDigitDumper, sort_keys=True, default_flow_style=False)


def outcome_label(outcome: Outcome) -> str:
    if outcome.kind == "success":
        return "success"
    if outcome.kind == "exited":
        return f"exited robot {outcome.agent} t={fmt(outcome.time)}"
    return f"collision robot {outcome.agent} with {outcome.other} t={fmt(outcome.time)}"


def batch_summary(logs, summary) -> dict:
    """Aggregate document for a batch of runs (logs sorted by seed)."""
    return {
        "runs": summary.n_runs,
        "successes": summary.n_success,
        "success_rate": float(summary.success_rate),
        "final_E": summary.final_E,
        "final_E_std": summary.final_E_std,
        "final_H": summary.final_H,
        "final_H_std": summary.final_H_std,
        "outcomes": {int(log.seed): outcome_label(log.outcome) for log in logs},
    }


def curves_table(summary) -> str:
    lines = ["t,mean_H,std_H,mean_Hr,std_Hr,mean_E,std_E"]
    for i, t in enumerate(summary.times):
        lines.append(",".join(fmt(v) for v in (
            t, summary.mean_H[i], summary.std_H[i], summary.mean_Hr[i],
            summary.std_Hr[i], summary.mean_E[i], summary.std_E[i])))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- SVG snapshot

def _marching_squares(xs, ys, values, level):
    """Contour segments of a scalar field at one level (midpoint disambiguation)."""
    segs = []
    nx, ny = len(xs), len(ys)
    for j in range(ny - 1):
        for i in range(nx - 1):
            v = [values[j, i], values[j, i + 1], values[j + 1, i + 1], values[j + 1, i]]
            corners = [(xs[i], ys[j]), (xs[i + 1], ys[j]),
                       (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
            idx = sum(1 << k for k in range(4) if v[k] > level)
            if idx in (0, 15):
                continue

            def interp(a, b):
                va, vb = v[a], v[b]
                t = 0.5 if vb == va else (level - va) / (vb - va)
                pa, pb = corners[a], corners[b]
                return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

            pts = []
            for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
                if (v[a] > level) != (v[b] > level):
                    pts.append(interp(a, b))
            if len(pts) == 2:
                segs.append((pts[0], pts[1]))
            elif len(pts) == 4:  # saddle: pair crossings in edge order
                segs.append((pts[0], pts[1]))
                segs.append((pts[2], pts[3]))
    return segs


def snapshot_svg(log: SimLog, t: float, scale: float = 60.0, pad: float = 20.0) -> str:
    """SVG frame at the step closest to ``t``: boundary, obstacles, density
    contours, robots with their planned trajectories, humans with prediction
    ellipses at the chance-constraint Mahalanobis level."""
    scen = log.scenario
    idx = int(np.argmin(np.abs(log.times - t))) if log.n_steps else 0
    xmin, xmax, ymin, ymax = scen.env.bbox

    def pt(x, y):
        return f"{fmt((x - xmin) * scale + pad)},{fmt((ymax - y) * scale + pad)}"

    width = (xmax - xmin) * scale + 2 * pad
    height = (ymax - ymin) * scale + 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{fmt(width)}" '
             f'height="{fmt(height)}" viewBox="0 0 {fmt(width)} {fmt(height)}">']
    boundary_pts = " ".join(pt(x, y) for x, y in scen.env.boundary)
    parts.append(f'<polygon class="boundary" points="{boundary_pts}" fill="none" '
                 f'stroke="black" stroke-width="2"/>')

    # density contours at quartile levels of the field maximum
    gx = np.linspace(xmin, xmax, 80)
    gy = np.linspace(ymin, ymax, 80)
    gxx, gyy = np.meshgrid(gx, gy)
    field = np.asarray(scen.density(np.column_stack([gxx.ravel(), gyy.ravel()])))
    field = field.reshape(gxx.shape)
    peak = float(field.max())
    if peak > 0:
        for frac in (0.25, 0.5, 0.75):
            for (x1, y1), (x2, y2) in _marching_squares(gx, gy, field, frac * peak):
                parts.append(f'<path class="density-contour" d="M {pt(x1, y1)} L '
                             f'{pt(x2, y2)}" stroke="orange" stroke-width="1" fill="none"/>')

    for j, ob in enumerate(scen.env.obstacles):
        cx, cy = ob.center
        parts.append(f'<circle class="obstacle" data-obstacle="{j}" '
                     f'cx="{fmt((cx - xmin) * scale + pad)}" '
                     f'cy="{fmt((ymax - cy) * scale + pad)}" '
                     f'r="{fmt(max(ob.radius, 0.05) * scale)}" fill="gray"/>')

    if log.n_steps:
        for i in range(len(scen.robots)):
            x, y = log.robot_states[i][idx][:2]
            plan = log.planned[idx][i]
            if plan is not None and len(plan):
                d = "M " + pt(x, y) + " " + " ".join("L " + pt(px, py) for px, py in plan)
                parts.append(f'<path class="plan" data-robot="{i}" d="{d}" stroke="green" '
                             f'stroke-width="1.5" fill="none"/>')
            parts.append(f'<circle class="robot" data-robot="{i}" '
                         f'cx="{fmt((x - xmin) * scale + pad)}" '
                         f'cy="{fmt((ymax - y) * scale + pad)}" r="6" fill="blue"/>')
        for j in range(len(scen.humans)):
            hx, hy, _ = log.human_states[idx, j]
            parts.append(f'<circle class="human" data-human="{j}" '
                         f'cx="{fmt((hx - xmin) * scale + pad)}" '
                         f'cy="{fmt((ymax - hy) * scale + pad)}" r="6" fill="purple"/>')
            for k in range(scen.mpc.horizon):
                cov = log.prediction_covs[idx, j, k]
                level = chance_constraint_rhs(cov, scen.mpc.risk_level,
                                              scen.mpc.safety_distance)
                if level <= 0:
                    continue
                evals, evecs = np.linalg.eigh(cov)
                order = np.argsort(evals)[::-1]
                evals, evecs = evals[order], evecs[:, order]
                rx = float(np.sqrt(level * evals[0])) * scale
                ry = float(np.sqrt(level * evals[1])) * scale
                mx, my = log.prediction_means[idx, j, k]
                cx = (mx - xmin) * scale + pad
                cy = (ymax - my) * scale + pad
                ang = -np.degrees(np.arctan2(evecs[1, 0], evecs[0, 0]))
                parts.append(
                    f'<ellipse class="pred-ellipse" data-human="{j}" data-step="{k}" '
                    f'cx="{fmt(cx)}" cy="{fmt(cy)}" rx="{fmt(rx)}" ry="{fmt(ry)}" '
                    f'transform="rotate({fmt(ang)} {fmt(cx)} {fmt(cy)})" fill="none" '
                    f'stroke="purple" stroke-width="0.7"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
