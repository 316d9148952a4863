"""Scenario file schema: strict hierarchical key-value documents.

Files are YAML with a closed schema: unknown keys, duplicate keys and type
errors are rejected with the offending line number.  Robot and human sections
may give explicit states or a count; counted agents are materialized per run
seed, which is why parsing yields a :class:`ScenarioDef` template that is
instantiated into a runtime :class:`~hmpcc.sim.Scenario` per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .baseline import BaselineConfig, RepulsionParams
from .density import GaussianComponent, GaussianMixture
from .geometry import Environment
from .mpc import MpcConfig
from .prediction import PredictorConfig
from .sim import HumanSpec, RobotSpec, Scenario, random_human_specs, random_robot_specs


class ScenarioError(Exception):
    """Parse or validation failure; message carries the source line."""


def _where(node, name):
    return f"{name}:{node.start_mark.line + 1}"


def _fail(node, name, msg):
    raise ScenarioError(f"{_where(node, name)}: {msg}")


def _as_map(node, name, context):
    if not isinstance(node, yaml.MappingNode):
        _fail(node, name, f"{context} must be a mapping")
    out = {}
    for key_node, value_node in node.value:
        key = key_node.value
        if key in out:
            _fail(key_node, name, f"duplicate key '{key}'")
        out[key] = (key_node, value_node)
    return out

def _check_keys(mapping, node, name, context, allowed, required=()):
    for key, (key_node, _) in mapping.items():
        if key not in allowed:
            _fail(key_node, name, f"unknown key '{key}' in {context}")
    for key in required:
        if key not in mapping:
            _fail(node, name, f"{context} is missing required key '{key}'")


def _scalar(node, name, kind, conv, context):
    if not isinstance(node, yaml.ScalarNode):
        _fail(node, name, f"{context} must be {kind}")
    try:
        return conv(node.value)
    except (TypeError, ValueError):
        _fail(node, name, f"{context} must be {kind}, got {node.value!r}")


def _float(node, name, context):
    return _scalar(node, name, "a number", float, context)


def _int(node, name, context):
    def conv(v):
        f = float(v)
        if f != int(f):
            raise ValueError
        return int(f)
    return _scalar(node, name, "an integer", conv, context)


def _str(node, name, context):
    if not isinstance(node, yaml.ScalarNode):
        _fail(node, name, f"{context} must be a string")
    return str(node.value)


def _bool(node, name, context):
    if isinstance(node, yaml.ScalarNode) and node.value in ("true", "True", "false", "False"):
        return node.value in ("true", "True")
    _fail(node, name, f"{context} must be a boolean")


def _seq(node, name, context):
    if not isinstance(node, yaml.SequenceNode):
        _fail(node, name, f"{context} must be a list")
    return node.value


def _vector(node, name, context, length=None):
    items = _seq(node, name, context)
    if length is not None and len(items) != length:
        _fail(node, name, f"{context} must have {length} entries, got {len(items)}")
    return [_float(n, name, f"{context} entry") for n in items]


def _matrix2(node, name, context):
    rows = _seq(node, name, context)
    if len(rows) != 2:
        _fail(node, name, f"{context} must be a 2x2 matrix")
    return [_vector(r, name, f"{context} row", 2) for r in rows]


@dataclass
class DensityDef:
    components: list | None = None       # dicts: weight, mean, sigma | covariance
    random: dict | None = None           # seed, k, sigma_range, weight_range

    def build(self) -> GaussianMixture:
        if self.random is not None:
            from .density import random_gmm
            return random_gmm(self.random["seed"], self.random["k"],
                              tuple(self.random["bounds"]),
                              tuple(self.random.get("sigma_range", (0.5, 1.5))),
                              tuple(self.random.get("weight_range", (0.5, 1.0))))
        comps = []
        for c in self.components:
            cov = (np.asarray(c["covariance"], dtype=float) if "covariance" in c
                   else c["sigma"] ** 2 * np.eye(2))
            comps.append(GaussianComponent(c["weight"], np.asarray(c["mean"]), cov))
        return GaussianMixture(comps)


@dataclass
class ScenarioDef:
    """Parsed scenario file: everything needed to materialize per-seed runs."""
    boundary: list
    obstacles: list                      # dicts: center, radius
    density: DensityDef
    robot_model: str
    sensing_range: float
    robot_count: int | None = None
    robot_states: list | None = None
    robot_start_box: list | None = None
    spawn_separation: float = 0.5
    human_count: int | None = None
    human_agents: list | None = None     # dicts: position, heading, speed
    human_speed: float = 1.0
    human_sigma: float = 0.3
    controller: str = "hmpcc"
    mpc: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    predictor: dict = field(default_factory=dict)
    duration: float = 15.0
    collision_obstacle: float = 0.2
    collision_human: float = 0.3
    metrics_grid_res: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    outputs: str | None = None

    def environment(self) -> Environment:
        return Environment(self.boundary,
                           [(np.asarray(o["center"]), o["radius"]) for o in self.obstacles])

    def mpc_config(self) -> MpcConfig:
        kw = dict(self.mpc)
        if "input_cost" in kw:
            kw["input_cost"] = np.diag(kw["input_cost"])
        for key in ("u_min", "u_max"):
            if key in kw:
                kw[key] = np.asarray(kw[key], dtype=float)
        for key in ("position_bounds", "velocity_bounds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return MpcConfig(**kw)

    def baseline_config(self) -> BaselineConfig:
        kw = dict(self.baseline)
        rep = {}
        if "repulsion_gain" in kw:
            rep["gain"] = kw.pop("repulsion_gain")
        if "influence_radius" in kw:
            rep["influence_radius"] = kw.pop("influence_radius")
        for key in ("u_min", "u_max"):
            if key in kw:
                kw[key] = np.asarray(kw[key], dtype=float)
        return BaselineConfig(repulsion=RepulsionParams(**rep), **kw)

    def instantiate(self, seed: int, controller: str | None = None) -> Scenario:
        env = self.environment()
        if self.human_agents is not None:
            humans = [HumanSpec(np.asarray(h["position"]), h["heading"], h["speed"])
                      for h in self.human_agents]
        elif self.human_count:
            humans = random_human_specs(env, self.human_count, self.human_speed, seed)
        else:
            humans = []
        if self.robot_states is not None:
            robots = [RobotSpec(self.robot_model, np.asarray(s)) for s in self.robot_states]
        else:
            # robots spawn clear of obstacles and of human starting spots
            robots = random_robot_specs(env, self.robot_count, self.robot_model, seed,
                                        keepout=[(h.position, 0.8) for h in humans],
                                        box=self.robot_start_box,
                                        separation=self.spawn_separation)
        mpc_cfg = self.mpc_config()
        base_cfg = self.baseline_config()
        # keep the two controllers driving the same actuators
        base_cfg.u_min = mpc_cfg.u_min.copy()
        base_cfg.u_max = mpc_cfg.u_max.copy()
        base_cfg.grid_res = mpc_cfg.grid_res
        base_cfg.ball_vertices = mpc_cfg.ball_vertices
        return Scenario(env=env, density=self.density.build(), robots=robots,
                        humans=humans, controller=controller or self.controller,
                        mpc=mpc_cfg, baseline=base_cfg,
                        predictor=PredictorConfig(**self.predictor),
                        duration=self.duration, sensing_range=self.sensing_range,
                        seed=seed, human_sigma=self.human_sigma,
                        collision_obstacle=self.collision_obstacle,
                        collision_human=self.collision_human,
                        metrics_grid_res=self.metrics_grid_res)

    def with_humans(self, count: int) -> "ScenarioDef":
        return replace(self, human_count=count, human_agents=None)


_MPC_KEYS = {"horizon", "dt", "input_cost", "safety_distance", "risk_level",
             "slack_weight", "emergency_factor", "u_min", "u_max", "position_bounds",
             "velocity_bounds", "sqp_iters", "grid_res", "k_gain", "ball_vertices",
             "avoid_neighbors"}
_BASE_KEYS = {"centroid_gain", "repulsion_gain", "influence_radius", "heading_gain",
              "velocity_gain"}
_PRED_KEYS = {"window", "sigma0", "qnoise"}


def parse_scenario_text(text: str, name: str = "<scenario>") -> ScenarioDef:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else "?"
        raise ScenarioError(f"{name}:{line}: syntax error: {exc.problem}") from exc
    if root is None:
        raise ScenarioError(f"{name}:1: empty scenario file")
    top = _as_map(root, name, "scenario")
    _check_keys(top, root, name, "scenario",
                {"environment", "density", "robots", "humans", "controller", "run"},
                required=("environment", "density", "robots", "run"))

    # --- environment ---
    env_map = _as_map(top["environment"][1], name, "environment")
    _check_keys(env_map, top["environment"][1], name, "environment",
                {"boundary", "obstacles"}, required=("boundary",))
    boundary = [_vector(v, name, "boundary vertex", 2)
                for v in _seq(env_map["boundary"][1], name, "boundary")]
    obstacles = []
    if "obstacles" in env_map:
        for onode in _seq(env_map["obstacles"][1], name, "obstacles"):
            omap = _as_map(onode, name, "obstacle")
            _check_keys(omap, onode, name, "obstacle", {"center", "radius"},
                        required=("center", "radius"))
            obstacles.append({"center": _vector(omap["center"][1], name, "center", 2),
                              "radius": _float(omap["radius"][1], name, "radius")})

    # --- density ---
    dmap = _as_map(top["density"][1], name, "density")
    _check_keys(dmap, top["density"][1], name, "density", {"components", "random"})
    if ("components" in dmap) == ("random" in dmap):
        _fail(top["density"][1], name, "density needs exactly one of 'components' or 'random'")
    if "components" in dmap:
        comps = []
        for cnode in _seq(dmap["components"][1], name, "components"):
            cmap = _as_map(cnode, name, "component")
            _check_keys(cmap, cnode, name, "component",
                        {"weight", "mean", "sigma", "covariance"},
                        required=("weight", "mean"))
            if ("sigma" in cmap) == ("covariance" in cmap):
                _fail(cnode, name, "component needs exactly one of 'sigma' or 'covariance'")
            comp = {"weight": _float(cmap["weight"][1], name, "weight"),
                    "mean": _vector(cmap["mean"][1], name, "mean", 2)}
            if "sigma" in cmap:
                comp["sigma"] = _float(cmap["sigma"][1], name, "sigma")
            else:
                comp["covariance"] = _matrix2(cmap["covariance"][1], name, "covariance")
            comps.append(comp)
        density = DensityDef(components=comps)
    else:
        rmap = _as_map(dmap["random"][1], name, "density.random")
        _check_keys(rmap, dmap["random"][1], name, "density.random",
                    {"seed", "k", "bounds", "sigma_range", "weight_range"},
                    required=("seed", "k", "bounds"))
        rnd = {"seed": _int(rmap["seed"][1], name, "seed"),
               "k": _int(rmap["k"][1], name, "k"),
               "bounds": _vector(rmap["bounds"][1], name, "bounds", 4)}
        if "sigma_range" in rmap:
            rnd["sigma_range"] = _vector(rmap["sigma_range"][1], name, "sigma_range", 2)
        if "weight_range" in rmap:
            rnd["weight_range"] = _vector(rmap["weight_range"][1], name, "weight_range", 2)
        density = DensityDef(random=rnd)

    # --- robots ---
    rmap = _as_map(top["robots"][1], name, "robots")
    _check_keys(rmap, top["robots"][1], name, "robots",
                {"model", "count", "states", "sensing_range", "start_box",
                 "spawn_separation"},
                required=("model", "sensing_range"))
    robot_model = _str(rmap["model"][1], name, "model")
    if robot_model not in ("single_integrator", "double_integrator", "unicycle"):
        _fail(rmap["model"][1], name, f"unknown robot model '{robot_model}'")
    if ("count" in rmap) == ("states" in rmap):
        _fail(top["robots"][1], name, "robots needs exactly one of 'count' or 'states'")
    robot_count = _int(rmap["count"][1], name, "count") if "count" in rmap else None
    robot_states = ([_vector(s, name, "robot state")
                     for s in _seq(rmap["states"][1], name, "states")]
                    if "states" in rmap else None)
    robot_start_box = (_vector(rmap["start_box"][1], name, "start_box", 4)
                       if "start_box" in rmap else None)
    spawn_separation = (_float(rmap["spawn_separation"][1], name, "spawn_separation")
                        if "spawn_separation" in rmap else 0.5)
    if robot_start_box is not None and robot_states is not None:
        _fail(rmap["start_box"][1], name, "start_box only applies to counted robots")
    sensing_range = _float(rmap["sensing_range"][1], name, "sensing_range")

    # --- humans ---
    human_count = None
    human_agents = None
    human_speed = 1.0
    human_sigma = 0.3
    if "humans" in top:
        hmap = _as_map(top["humans"][1], name, "humans")
        _check_keys(hmap, top["humans"][1], name, "humans",
                    {"count", "agents", "speed", "sigma"})
        if "count" in hmap and "agents" in hmap:
            _fail(top["humans"][1], name, "humans takes either 'count' or 'agents', not both")
        if "count" in hmap:
            human_count = _int(hmap["count"][1], name, "count")
        if "agents" in hmap:
            human_agents = []
            for anode in _seq(hmap["agents"][1], name, "agents"):
                amap = _as_map(anode, name, "human")
                _check_keys(amap, anode, name, "human",
                            {"position", "heading", "speed"},
                            required=("position", "heading", "speed"))
                human_agents.append({
                    "position": _vector(amap["position"][1], name, "position", 2),
                    "heading": _float(amap["heading"][1], name, "heading"),
                    "speed": _float(amap["speed"][1], name, "speed")})
        if "speed" in hmap:
            human_speed = _float(hmap["speed"][1], name, "speed")
        if "sigma" in hmap:
            human_sigma = _float(hmap["sigma"][1], name, "sigma")

    # --- controller ---
    controller = "hmpcc"
    mpc_kw, base_kw, pred_kw = {}, {}, {}
    if "controller" in top:
        cmap = _as_map(top["controller"][1], name, "controller")
        _check_keys(cmap, top["controller"][1], name, "controller",
                    {"type", "mpc", "baseline", "predictor"})
        if "type" in cmap:
            controller = _str(cmap["type"][1], name, "type")
            if controller not in ("hmpcc", "baseline"):
                _fail(cmap["type"][1], name, f"controller type must be 'hmpcc' or "
                                             f"'baseline', got '{controller}'")
        if "mpc" in cmap:
            mmap = _as_map(cmap["mpc"][1], name, "mpc")
            _check_keys(mmap, cmap["mpc"][1], name, "mpc", _MPC_KEYS)
            for key, (_, vnode) in mmap.items():
                if key in ("horizon", "sqp_iters", "ball_vertices"):
                    mpc_kw[key] = _int(vnode, name, key)
                elif key in ("input_cost", "u_min", "u_max"):
                    mpc_kw[key] = _vector(vnode, name, key, 2)
                elif key == "position_bounds":
                    mpc_kw[key] = _vector(vnode, name, key, 4)
                elif key == "velocity_bounds":
                    mpc_kw[key] = _vector(vnode, name, key, 2)
                elif key == "avoid_neighbors":
                    mpc_kw[key] = _bool(vnode, name, key)
                else:
                    mpc_kw[key] = _float(vnode, name, key)
        if "baseline" in cmap:
            bmap = _as_map(cmap["baseline"][1], name, "baseline")
            _check_keys(bmap, cmap["baseline"][1], name, "baseline", _BASE_KEYS)
            for key, (_, vnode) in bmap.items():
                base_kw[key] = _float(vnode, name, key)
        if "predictor" in cmap:
            pmap = _as_map(cmap["predictor"][1], name, "predictor")
            _check_keys(pmap, cmap["predictor"][1], name, "predictor", _PRED_KEYS)
            for key, (_, vnode) in pmap.items():
                pred_kw[key] = _int(vnode, name, key) if key == "window" else \
                    _float(vnode, name, key)

    # --- run ---
    runmap = _as_map(top["run"][1], name, "run")
    _check_keys(runmap, top["run"][1], name, "run",
                {"duration", "seeds", "outputs", "collision_obstacle", "collision_human",
                 "metrics_grid_res"}, required=("duration", "seeds"))
    duration = _float(runmap["duration"][1], name, "duration")
    seeds = [_int(s, name, "seed") for s in _seq(runmap["seeds"][1], name, "seeds")]
    if not seeds:
        _fail(runmap["seeds"][1], name, "seeds must not be empty")
    outputs = _str(runmap["outputs"][1], name, "outputs") if "outputs" in runmap else None
    collision_obstacle = (_float(runmap["collision_obstacle"][1], name, "collision_obstacle")
                          if "collision_obstacle" in runmap else 0.2)
    collision_human = (_float(runmap["collision_human"][1], name, "collision_human")
                       if "collision_human" in runmap else 0.3)
    metrics_grid_res = (_float(runmap["metrics_grid_res"][1], name, "metrics_grid_res")
                        if "metrics_grid_res" in runmap else 0.1)

    sdef = ScenarioDef(boundary=boundary, obstacles=obstacles, density=density,
                       robot_model=robot_model, sensing_range=sensing_range,
                       robot_count=robot_count, robot_states=robot_states,
                       robot_start_box=robot_start_box,
                       spawn_separation=spawn_separation,
                       human_count=human_count, human_agents=human_agents,
                       human_speed=human_speed, human_sigma=human_sigma,
                       controller=controller, mpc=mpc_kw, baseline=base_kw,
                       predictor=pred_kw, duration=duration,
                       collision_obstacle=collision_obstacle,
                       collision_human=collision_human,
                       metrics_grid_res=metrics_grid_res, seeds=seeds, outputs=outputs)
    try:
        sdef.environment()
        sdef.density.build()
        sdef.mpc_config()
        sdef.baseline_config()
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{name}:1: invalid scenario: {exc}") from exc
    return sdef


def parse_scenario(path) -> ScenarioDef:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file: {exc}") from exc
    return parse_scenario_text(text, name=str(path))


def to_dict(sdef: ScenarioDef) -> dict:
    """Plain-data mirror of the file schema (used for serialization/equality)."""
    env = {"boundary": [list(v) for v in sdef.boundary]}
    if sdef.obstacles:
        env["obstacles"] = [{"center": list(o["center"]), "radius": o["radius"]}
                            for o in sdef.obstacles]
    if sdef.density.random is not None:
        density = {"random": dict(sdef.density.random)}
    else:
        density = {"components": [dict(c) for c in sdef.density.components]}
    robots = {"model": sdef.robot_model, "sensing_range": sdef.sensing_range}
    if sdef.robot_states is not None:
        robots["states"] = [list(s) for s in sdef.robot_states]
    else:
        robots["count"] = sdef.robot_count
        if sdef.robot_start_box is not None:
            robots["start_box"] = list(sdef.robot_start_box)
        if sdef.spawn_separation != 0.5:
            robots["spawn_separation"] = sdef.spawn_separation
    doc = {"environment": env, "density": density, "robots": robots}
    humans = {}
    if sdef.human_agents is not None:
        humans["agents"] = [dict(h) for h in sdef.human_agents]
    elif sdef.human_count is not None:
        humans["count"] = sdef.human_count
    humans["speed"] = sdef.human_speed
    humans["sigma"] = sdef.human_sigma
    doc["humans"] = humans
    doc["controller"] = {"type": sdef.controller}
    if sdef.mpc:
        doc["controller"]["mpc"] = dict(sdef.mpc)
    if sdef.baseline:
        doc["controller"]["baseline"] = dict(sdef.baseline)
    if sdef.predictor:
        doc["controller"]["predictor"] = dict(sdef.predictor)
    run = {"duration": sdef.duration, "seeds": list(sdef.seeds),
           "collision_obstacle": sdef.collision_obstacle,
           "collision_human": sdef.collision_human,
           "metrics_grid_res": sdef.metrics_grid_res}
    if sdef.outputs is not None:
        run["outputs"] = sdef.outputs
    doc["run"] = run
    return doc


class _ExactDumper(yaml.SafeDumper):
    pass


_ExactDumper.add_representer(
    float, lambda d, v: d.represent_scalar("tag:yaml.org,2002:float", repr(float(v))))


def serialize_scenario(sdef: ScenarioDef) -> str:
    """Deterministic text form; floats use shortest round-trip representation
    so parse(serialize(s)) reproduces s exactly."""
    return yaml.dump(to_dict(sdef), Dumper=_ExactDumper, sort_keys=False,
                     default_flow_style=None)


def defs_equal(a: ScenarioDef, b: ScenarioDef) -> bool:
    return to_dict(a) == to_dict(b)
