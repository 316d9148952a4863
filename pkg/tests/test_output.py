import re

import numpy as np

from hmpcc.density import GaussianComponent, GaussianMixture
from hmpcc.geometry import Environment
from hmpcc.metrics import aggregate
from hmpcc.output import (fmt, log_from_dict, log_json, log_to_dict, snapshot_svg,
                          summary_text, trajectory_table, write_atomic)
from hmpcc.sim import HumanSpec, RobotSpec, Scenario, run

ARENA = Environment.rectangle(-5, 5, -5, 5, obstacles=[((2.0, 2.0), 0.4)])


def demo_log(robots=2, humans=1, duration=1.0, controller="baseline"):
    gmm = GaussianMixture([GaussianComponent(1.0, (0.0, 0.0), 1.5 * np.eye(2))])
    robot_specs = [RobotSpec("single_integrator", (-2.0 + i, -2.0)) for i in range(robots)]
    human_specs = [HumanSpec((0.0, 3.0 - j), -np.pi / 2, 0.8) for j in range(humans)]
    scen = Scenario(env=ARENA, density=gmm, robots=robot_specs, humans=human_specs,
                    controller=controller, duration=duration, seed=5)
    return run(scen)


def test_trajectory_table_row_count():
    log = demo_log(robots=2, humans=1, duration=1.0)
    table = trajectory_table(log)
    lines = table.strip().split("\n")
    steps = log.n_steps
    assert len(lines) == 1 + steps * (2 + 1)  # header + steps x agents
    assert lines[0].startswith("t,id,kind,")
    assert ",r0," in lines[1] and ",h0," in lines[3]


def test_fmt_nine_significant_digits():
    assert fmt(np.pi) == "3.14159265"
    assert fmt(150.0) == "150"
    assert fmt(1e-7) == "1e-07"


def test_log_json_round_trip():
    log = demo_log(controller="hmpcc", duration=0.5)
    d = log_to_dict(log)
    again = log_from_dict(d)
    assert again.digest() == log.digest()
    assert log_json(again) == log_json(log)


def test_summary_text_deterministic():
    log = demo_log()
    summary = aggregate([log])
    from hmpcc.output import batch_summary
    doc = batch_summary([log], summary)
    assert summary_text(doc) == summary_text(doc)
    assert "success_rate" in summary_text(doc)


def test_snapshot_contains_expected_elements():
    log = demo_log(controller="hmpcc", duration=0.6)
    svg = snapshot_svg(log, t=0.5)
    assert svg.startswith("<svg")
    assert 'class="boundary"' in svg
    assert svg.count('class="robot"') == 2
    assert svg.count('class="human"') == 1
    assert svg.count('class="obstacle"') == 1
    assert 'class="plan"' in svg


def test_snapshot_empty_scenario_is_boundary_only():
    gmm = GaussianMixture([GaussianComponent(1.0, (0.0, 0.0), np.eye(2))])
    scen = Scenario(env=Environment.rectangle(-5, 5, -5, 5), density=gmm, robots=[],
                    humans=[], controller="baseline", duration=0.5, seed=1)
    svg = snapshot_svg(run(scen), t=0.1)
    assert 'class="boundary"' in svg
    for payload in ("robot", "human", "obstacle", "pred-ellipse"):
        assert f'class="{payload}"' not in svg


def test_prediction_ellipses_grow_along_horizon():
    log = demo_log(controller="hmpcc", duration=1.0, humans=1)
    svg = snapshot_svg(log, t=0.9)
    ellipses = re.findall(r'<ellipse class="pred-ellipse" data-human="0" data-step="(\d+)"'
                          r' [^>]*rx="([0-9.eE+-]+)" ry="([0-9.eE+-]+)"', svg)
    assert len(ellipses) >= 5
    ellipses.sort(key=lambda t: int(t[0]))
    major = [max(float(rx), float(ry)) for _, rx, ry in ellipses]
    minor = [min(float(rx), float(ry)) for _, rx, ry in ellipses]
    assert all(a <= b + 1e-9 for a, b in zip(major, major[1:]))
    assert all(a <= b + 1e-9 for a, b in zip(minor, minor[1:]))


def test_write_atomic(tmp_path):
    target = tmp_path / "deep" / "file.txt"
    write_atomic(target, "payload")
    assert target.read_text() == "payload"
    write_atomic(target, "payload2")
    assert target.read_text() == "payload2"
    assert list(target.parent.glob("*.tmp")) == []
