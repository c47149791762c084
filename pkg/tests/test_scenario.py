import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatflow.errors import ConfigError, ParseError, ValidationError
from heatflow.scenario import (bundled_scenarios, from_dict, parse_config, parse_text, resolve_path,
                               smooth_perturbation)
from heatflow.grid import DomainGrid

MINIMAL = {
    "target": {"kind": "euclidean", "dim": 1},
    "grid": {"kind": "circle", "lengths": [6.283185307179586], "nodes": [32]},
    "initial_map": {"recipe": "sine-perturbation"},
}


def test_bundled_scenarios_present():
    assert bundled_scenarios() == ["circle_sine_euclidean.json", "geodesic_h2_dirichlet.json",
                                   "torus_winding_loop.json"]


def test_minimal_config_gets_defaults():
    scen = from_dict(MINIMAL)
    grid = scen.grid
    assert scen.flow.dt == pytest.approx(0.2 * grid.h_min**2)
    assert scen.flow.stepper == "coordinate_rk4"
    assert scen.flow.stop_tolerance == 1e-10 and scen.flow.snapshot_stride == 100
    assert scen.analysis.eig_k == 4 and scen.seed == 0 and scen.name == "scenario"
    f0 = scen.initial()
    assert np.allclose(f0.values[:, 0], 0.1 * np.sin(grid.coordinates()[0]))


def test_acceptance_scenario_file_contents():
    scen = parse_config("geodesic_h2_dirichlet.json")
    assert scen.target.kind == "hyperbolic" and scen.target.curvature == 1.0 and scen.target.dim == 2
    assert scen.grid.kind == "interval" and scen.grid.nodes == (201,) and scen.grid.lengths == (1.0,)
    f0 = scen.initial()
    assert np.array_equal(f0.values[0], [-1.0, 1.0]) and np.array_equal(f0.values[-1], [1.0, 1.0])
    straight = np.stack([np.linspace(-1, 1, 201), np.ones(201)], -1)
    assert np.max(np.abs(f0.values - straight)) == pytest.approx(0.1)


@pytest.mark.parametrize("name", ["circle_sine_euclidean.json", "geodesic_h2_dirichlet.json",
                                  "torus_winding_loop.json"])
def test_parse_serialize_round_trip(name):
    scen = parse_config(name)
    again = parse_text(scen.to_json())
    assert again.to_dict() == scen.to_dict()
    assert again.config_hash() == scen.config_hash()
    assert np.array_equal(again.initial().values, scen.initial().values)


def test_hash_ignores_output_but_tracks_seed():
    scen = from_dict(MINIMAL)
    data = scen.to_dict()
    data["output"]["dir"] = "/tmp/elsewhere"
    assert from_dict(data).config_hash() == scen.config_hash()
    assert scen.with_seed(5).config_hash() != scen.config_hash()


def test_dt_above_stability_bound_is_rejected():
    data = json.loads(json.dumps(MINIMAL))
    data["flow"] = {"dt": 1.0}
    with pytest.raises(ValidationError) as info:
        from_dict(data)
    assert info.value.field == "dt" and info.value.reason == "exceeds stability bound"


@pytest.mark.parametrize("patch, field", [
    ({"colour": 1}, "colour"),
    ({"flow": {"stepsize": 1}}, "flow.stepsize"),
    ({"initial_map": {"recipe": "spiral"}}, "initial_map.recipe"),
    ({"initial_map": {"recipe": "sine-perturbation", "start": [0.0]}}, "initial_map.start"),
    ({"initial_map": {"recipe": "winding-loop"}}, "initial_map.recipe"),
    ({"target": {"kind": "sphere"}}, "target"),
    ({"grid": {"kind": "circle", "lengths": [1.0], "nodes": [2]}}, "grid"),
    ({"analysis": {"eig_k": 0}}, "analysis.eig_k"),
    ({"output": {"snapshot_every": 0}}, "output.snapshot_every"),
    ({"flow": {"stepper": "leapfrog"}}, "stepper"),
])
def test_validation_errors_name_the_field(patch, field):
    data = json.loads(json.dumps(MINIMAL))
    data.update(patch)
    with pytest.raises(ValidationError) as info:
        from_dict(data)
    assert info.value.field == field


def test_missing_required_section():
    data = dict(MINIMAL)
    del data["grid"]
    with pytest.raises(ValidationError) as info:
        from_dict(data)
    assert info.value.field == "grid" and info.value.reason == "required"


def test_parse_error_carries_line():
    with pytest.raises(ParseError) as info:
        parse_text('{\n  "target": {"kind": "euclidean"},\n  oops\n}')
    assert info.value.line == 3
    with pytest.raises(ParseError):
        parse_text("[1, 2]")


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        resolve_path(tmp_path / "nope.json")
    path = tmp_path / "mine.json"
    path.write_text(json.dumps(MINIMAL))
    assert resolve_path(path) == path
    assert parse_config("torus_winding_loop").name == "torus_winding_loop"


def test_initial_map_leaving_chart_is_rejected():
    data = {
        "target": {"kind": "hyperbolic", "dim": 2},
        "grid": {"kind": "interval", "lengths": [1.0], "nodes": [21]},
        "initial_map": {"recipe": "perturbed-geodesic-path", "start": [0, 0.01], "end": [1, 0.01],
                        "perturbation": 1.0},
    }
    with pytest.raises(ValidationError) as info:
        from_dict(data)
    assert info.value.field == "initial_map"


@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.integers(1, 5))
def test_perturbation_amplitude_and_boundary(seed, amp, modes):
    grid = DomainGrid.interval(1.0, 33)
    pert = smooth_perturbation(grid, 2, amp, modes, np.random.default_rng(seed))
    assert np.max(np.abs(pert)) == pytest.approx(amp)
    assert np.allclose(pert[[0, -1]], 0, atol=1e-12 * amp)
