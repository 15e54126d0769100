import json
import math

import pytest

from csas.scenario import (
    BUNDLED,
    ScenarioError,
    apply_overrides,
    bundled_scenario_text,
    derive_streams,
    load_scenario,
    parse_scenario_text,
    scenario_from_dict,
)

MINIMAL = {
    "version": 1, "seed": 3, "duration": 10.0,
    "latency": {"mean": 0.1},
    "workload": {"segments": [[0, 100.0]]},
    "controller": {"kind": "csas"},
}


def with_(**over):
    return apply_overrides(MINIMAL, over)


def test_minimal_defaults():
    cfg = scenario_from_dict(MINIMAL)
    assert cfg.tick == 0.02 and cfg.node_count == 50
    assert cfg.latency.scale == pytest.approx(0.05)
    assert len(cfg.provisioning_constants) == 50
    assert all(0.2 <= t <= 0.8 for t in cfg.provisioning_constants)
    assert cfg.controller.csas.provisioning_constant == pytest.approx(cfg.effective_time_constant)
    assert cfg.controller.pid.target_utilization == cfg.target_utilization == 0.6


def test_provisioning_constants_follow_seed():
    a = scenario_from_dict(MINIMAL).provisioning_constants
    assert a == scenario_from_dict(MINIMAL).provisioning_constants
    assert a != scenario_from_dict(with_(seed=4)).provisioning_constants


def test_streams_are_distinct():
    w, l, n = derive_streams(1, 0)
    assert len({s.generate_state(1)[0] for s in (w, l, n)}) == 3
    assert derive_streams(1, 0)[0].generate_state(2).tolist() == w.generate_state(2).tolist()


@pytest.mark.parametrize("over,field", [
    ({"bogus": 1}, ""),
    ({"latency.shape": 2}, "latency"),
    ({"controller.csas.gain": 2}, "controller.csas"),
    ({"version": 2}, "version"),
    ({"seed": -1}, "seed"),
    ({"seed": 2 ** 64}, "seed"),
    ({"tick": 0.05}, "tick"),
    ({"duration": 1.0}, "duration"),
    ({"controller.kind": "fuzzy"}, "controller.kind"),
    ({"latency.mean": 0}, "latency.mean"),
    ({"workload.segments": [[5, 1], [2, 1]]}, "workload.segments[1]"),
    ({"controller.heuristic.lower": 0.9}, "controller.heuristic"),
    ({"controller.csas.noise_window": 1}, "controller.csas"),
    ({"metrics.settling_band": 0.7}, "metrics.settling_band"),
    ({"analysis.gains": [0.5]}, "analysis.gains"),
    ({"provisioning": {"range": [0.2, 0.8], "constants": [0.5]}}, "provisioning"),
])
def test_validation_names_the_field(over, field):
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(with_(**over))
    assert info.value.field == field


def test_missing_required_field():
    data = dict(MINIMAL)
    del data["latency"]
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(data)
    assert info.value.field == "latency"


def test_syntax_error_reports_line():
    text = '{\n  "version": 1,\n  "seed": 3,\n  oops\n}'
    with pytest.raises(ScenarioError) as info:
        parse_scenario_text(text)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_overrides_apply_dotted_paths():
    cfg = parse_scenario_text(json.dumps(MINIMAL), {"latency.mean": 0.3, "controller.kind": "pid",
                                                    "controller.pid.kp": 2.5})
    assert cfg.latency.mean == 0.3
    assert cfg.controller.kind == "pid" and cfg.controller.pid.kp == 2.5
    assert MINIMAL["latency"]["mean"] == 0.1


def test_workload_rate_and_bursts():
    cfg = scenario_from_dict(with_(**{
        "workload.segments": [[0, 100.0], [10, 300.0]],
        "workload.bursts": [{"start": 2, "duration": 1, "multiplier": 3.0}]}))
    wl = cfg.workload
    assert wl.rate_at(0) == 100 and wl.rate_at(2.5) == 300 and wl.rate_at(3.0) == 100
    assert wl.rate_at(10) == 300


def test_analysis_section():
    cfg = scenario_from_dict(with_(analysis={"gain": 4, "gains": [2, 3],
                                             "margin_floor_deg": 45}))
    assert cfg.analysis.gain == 4 and cfg.analysis.gains == (2.0, 3.0)
    assert cfg.analysis.margin_floor == pytest.approx(math.pi / 4)


def test_control_cadence():
    cfg = scenario_from_dict(with_(control_interval=0.5))
    assert cfg.control_every == 25 and cfg.ticks == 500


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    cfg = load_scenario(name)
    assert cfg.name == name
    assert json.loads(bundled_scenario_text(name))["seed"] == cfg.seed


def test_unknown_scenario_path():
    with pytest.raises(ScenarioError):
        load_scenario("/nonexistent/file.json")
    with pytest.raises(ScenarioError):
        bundled_scenario_text("nope")


def test_load_from_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(MINIMAL))
    assert load_scenario(path, {"seed": 9}).seed == 9
