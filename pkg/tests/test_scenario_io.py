import pathlib

import numpy as np
import pytest

from hmpcc.scenario import (ScenarioError, defs_equal, parse_scenario,
                            parse_scenario_text, serialize_scenario)

SCENARIOS = pathlib.Path(__file__).resolve().parent.parent / "scenarios"

TINY = """\
environment:
  boundary: [[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]]
  obstacles:
    - {center: [2.0, 2.0], radius: 0.4}
density:
  components:
    - {weight: 1.0, mean: [0.0, 0.0], sigma: 1.2}
robots:
  model: single_integrator
  count: 2
  sensing_range: 5.0
humans:
  count: 1
  speed: 1.0
  sigma: 0.3
controller:
  type: baseline
run:
  duration: 1.0
  seeds: [1, 2]
"""


def test_parse_sample_convex_scenario():
    sdef = parse_scenario(SCENARIOS / "convex.yaml")
    assert sdef.robot_model == "double_integrator"
    assert sdef.robot_count == 6
    scen = sdef.instantiate(seed=3)
    assert len(scen.robots) == 6
    assert all(r.model == "double_integrator" for r in scen.robots)
    assert all(scen.env.contains(r.state[:2]) for r in scen.robots)
    assert scen.mpc.horizon == 10
    assert scen.mpc.dt == 0.1


def test_instantiation_is_seed_dependent_and_deterministic():
    sdef = parse_scenario_text(TINY)
    a = sdef.instantiate(1)
    b = sdef.instantiate(1)
    c = sdef.instantiate(2)
    assert np.array_equal(a.robots[0].state, b.robots[0].state)
    assert not np.array_equal(a.robots[0].state, c.robots[0].state)
    assert np.array_equal(a.humans[0].position, b.humans[0].position)


def test_empty_file_rejected():
    with pytest.raises(ScenarioError, match="empty scenario"):
        parse_scenario_text("")


def test_duplicate_key_rejected_with_name_and_line():
    text = TINY.replace("run:\n  duration: 1.0", "run:\n  duration: 1.0\n  duration: 2.0")
    with pytest.raises(ScenarioError, match=r"duplicate key 'duration'") as exc:
        parse_scenario_text(text, name="dup.yaml")
    assert "dup.yaml:" in str(exc.value)


def test_unknown_key_rejected_with_location():
    text = TINY.replace("  sigma: 0.3", "  sigma: 0.3\n  mood: grumpy")
    with pytest.raises(ScenarioError, match=r"unknown key 'mood'") as exc:
        parse_scenario_text(text, name="bad.yaml")
    assert "bad.yaml:" in str(exc.value)
    line = int(str(exc.value).split("bad.yaml:")[1].split(":")[0])
    assert line == TINY.splitlines().index("  sigma: 0.3") + 2


def test_syntax_error_has_line():
    with pytest.raises(ScenarioError, match="syntax error"):
        parse_scenario_text("environment: [unclosed")


def test_type_errors_are_located():
    text = TINY.replace("duration: 1.0", "duration: soon")
    with pytest.raises(ScenarioError, match="duration must be a number"):
        parse_scenario_text(text)
    text = TINY.replace("count: 2", "count: 2.5")
    with pytest.raises(ScenarioError, match="count must be an integer"):
        parse_scenario_text(text)


def test_controller_type_validated():
    text = TINY.replace("type: baseline", "type: psychic")
    with pytest.raises(ScenarioError, match="hmpcc"):
        parse_scenario_text(text)


def test_density_needs_exactly_one_source():
    text = TINY.replace("  components:",
                        "  random: {seed: 1, k: 2, bounds: [-1, 1, -1, 1]}\n  components:")
    with pytest.raises(ScenarioError, match="exactly one"):
        parse_scenario_text(text)


def test_missing_required_section():
    text = TINY.replace("robots:\n  model: single_integrator\n  count: 2\n  sensing_range: 5.0\n", "")
    with pytest.raises(ScenarioError, match="missing required key 'robots'"):
        parse_scenario_text(text)


def test_round_trip_identity():
    for source in (TINY, (SCENARIOS / "convex.yaml").read_text()):
        sdef = parse_scenario_text(source)
        text = serialize_scenario(sdef)
        again = parse_scenario_text(text)
        assert defs_equal(sdef, again)
        assert serialize_scenario(again) == text  # serialization is a fixed point


def test_serialization_deterministic():
    sdef = parse_scenario_text(TINY)
    assert serialize_scenario(sdef) == serialize_scenario(sdef)


def test_with_humans_override():
    sdef = parse_scenario_text(TINY)
    sdef9 = sdef.with_humans(9)
    assert sdef9.human_count == 9
    assert len(sdef9.instantiate(1).humans) == 9
    # original untouched
    assert sdef.human_count == 1


def test_human_streams_nested_by_index():
    sdef = parse_scenario_text(TINY)
    three = sdef.with_humans(3).instantiate(7)
    five = sdef.with_humans(5).instantiate(7)
    for a, b in zip(three.humans, five.humans):
        assert np.array_equal(a.position, b.position)
        assert a.heading == b.heading
