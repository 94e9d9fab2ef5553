import math

import pytest
import numpy as np
import yaml

import bearingform.exceptions
import bearingform.scenario
from bearingform.scenario import Scenario


@pytest.fixture
def builtins():
    return bearingform.scenario.builtin_scenarios()


SCENARIO_YAML = """
name: triangle
formation: {d: 2, n: 3, edges: [[1, 2], [2, 3], [1, 3]], leaders: [1]}
run: {mode: centralized-observer, duration: 2.5, dt: 0.01, seed: 4, delay: 0}
noise: {kind: none}
pe: {window: 1.0, threshold: 0.001}
gains:
  centralized: {kappa: 2, Q: {identity: 3}, S: {identity: 0.01}, M0: 1}
reference:
  name: orbit
  params: {positions: [[0, 0], [3, 0], [0, 3]], agent: 1, radius: 0.5}
"""


def test_builtin_names(builtins):
    assert sorted(builtins) == ["paper-centralized", "paper-control", "paper-decentralized"]


def test_paper_centralized_initial_estimate(builtins):
    sc = builtins["paper-centralized"]
    np.testing.assert_array_equal(sc.p_hat0[1], [2, 0, 1])
    assert sc.mode == "centralized-observer"
    assert sc.centralized.kappa == 10.0
    assert sc.d == 3


def test_paper_control_initial_velocity(builtins):
    sc = builtins["paper-control"]
    np.testing.assert_array_equal(sc.v0[1], [1, -1, -1])
    np.testing.assert_array_equal(sc.p0[0], [1, 0, 0])
    assert sc.active_estimator == "decentralized"
    assert (sc.controller.kappa_p, sc.controller.kappa_v) == (5.0, 2.0)


def test_paper_decentralized_gains(builtins):
    sc = builtins["paper-decentralized"]
    assert (sc.distributed.kappa_o1, sc.distributed.kappa_o2) == (10.0, 5.0)
    assert sc.edge.M0 == 100.0
    assert sc.pe.edges == [(1, 2), (1, 4)]
    assert sc.noise.kind == "multiplicative-skew"
    assert sc.noise.magnitude == 0.02


def test_paper_scenarios_validate(builtins):
    for sc in builtins.values():
        g = sc.validate()
        assert g.m == 4
        assert sc.steps == 30000


def test_initial_conditions_default_to_reference(builtins):
    sc = builtins["paper-centralized"]
    p, v, p_hat, v_hat = sc.initial_conditions()
    r = 2 * math.sqrt(2)
    np.testing.assert_allclose(p[0], [r, r, 0])
    np.testing.assert_array_equal(p_hat, sc.p_hat0)


def test_builtin_unknown():
    with pytest.raises(bearingform.exceptions.ConfigurationError, match="paper-control"):
        bearingform.scenario.builtin("paper-leaderless")


@pytest.mark.parametrize(
    "value,expected",
    [
        (3, 3.0),
        ({"identity": 2.5}, 2.5),
        ({"rows": [[1, 0], [0, 2]]}, np.diag([1.0, 2.0])),
    ],
)
def test_decode_matrix(value, expected):
    np.testing.assert_array_equal(bearingform.scenario.decode_matrix(value), expected)


@pytest.mark.parametrize("value", [{"diag": [1, 2]}, "ten", {"identity": 1, "rows": []}])
def test_decode_matrix_rejects(value):
    with pytest.raises(bearingform.exceptions.ConfigurationError):
        bearingform.scenario.decode_matrix(value)


def test_load_scenario(tmp_path):
    path = tmp_path / "triangle.yaml"
    path.write_text(SCENARIO_YAML)
    sc = bearingform.scenario.load_scenario(path)
    assert sc.n == 3
    assert sc.edges == [(1, 2), (2, 3), (1, 3)]
    assert sc.seed == 4
    assert sc.centralized.Q == 3.0
    assert sc.centralized.S == 0.01
    assert sc.reference == "orbit"
    assert sc.pe.edges is None
    assert sc.build_reference().n == 3


def test_dump_then_load_keeps_paper_control(tmp_path, builtins):
    sc = builtins["paper-control"]
    path = tmp_path / "control.yaml"
    bearingform.scenario.dump_scenario(sc, path)
    loaded = bearingform.scenario.load_scenario(path)
    np.testing.assert_array_equal(loaded.v0, sc.v0)
    assert loaded.pe.edges == sc.pe.edges
    assert loaded.edge.M0 == 100.0
    assert loaded.mode == sc.mode
    assert yaml.safe_load(path.read_text())["run"]["seed"] == 0


@pytest.mark.parametrize(
    "data,fragment",
    [
        ({"formation": {"d": 3, "n": 4}}, "edges"),
        ({"formation": {"d": 3, "n": 2, "edges": [[1, 2]]}, "gains": {"edge": {"gamma": 1}}}, "gamma"),
        ({"formation": {"d": 3, "n": 2, "edges": [[1, 2]]}, "noise": {"kind": "white"}}, "white"),
        ({"formation": {"d": 3, "n": 2, "edges": [[1, 2]]}, "gains": {"centralized": {"kappa": 0.1}}}, "1/2"),
    ],
)
def test_scenario_from_dict_rejects(data, fragment):
    with pytest.raises(bearingform.exceptions.ConfigurationError, match=fragment):
        bearingform.scenario.scenario_from_dict(data)


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("formation: [1, 2\n")
    with pytest.raises(bearingform.exceptions.ConfigurationError, match="cannot parse"):
        bearingform.scenario.load_scenario(path)


@pytest.mark.parametrize(
    "changes,fragment",
    [
        ({"dt": 0.0}, "dt"),
        ({"duration": 1e-4}, "shorter"),
        ({"mode": "open-loop"}, "mode"),
        ({"estimator": "oracle"}, "estimator"),
        ({"delay": -1}, "delay"),
        ({"leaders": [5]}, "leaders"),
        ({"p0": np.zeros((3, 3))}, "shape"),
        ({"reference": "static", "reference_params": {"positions": np.eye(3)}}, "reference"),
    ],
)
def test_validate_rejects(changes, fragment):
    sc = bearingform.scenario.builtin("paper-decentralized")
    for key, value in changes.items():
        setattr(sc, key, value)
    with pytest.raises(bearingform.exceptions.ConfigurationError, match=fragment):
        sc.validate()


def test_skew_noise_needs_two_or_three_dimensions():
    sc = Scenario(
        d=4,
        reference="static",
        reference_params={"positions": np.eye(4)},
        noise=bearingform.scenario.NoiseModel("multiplicative-skew"),
    )
    with pytest.raises(bearingform.exceptions.ConfigurationError, match="skew"):
        sc.validate()


def test_with_overrides(builtins):
    sc = builtins["paper-centralized"].with_overrides(seed=9, dt=0.002, duration=1.0)
    assert (sc.seed, sc.dt, sc.duration, sc.steps) == (9, 0.002, 1.0, 500)
    assert builtins["paper-centralized"].seed == 0


def test_active_estimator():
    assert Scenario(mode="truth-feedback-control").active_estimator == "truth"
    assert Scenario(mode="observer-based-control", estimator="centralized").active_estimator == "centralized"
    assert Scenario(mode="centralized-observer", estimator="truth").active_estimator == "centralized"


@pytest.mark.parametrize(
    "section,name,value,fragment",
    [
        ("centralized", "Q", -1.0, "centralized Q"),
        ("centralized", "S", np.eye(3), "24x24"),
        ("centralized", "M0", 0.0, "centralized M0"),
        ("edge", "Q", -np.eye(3), "positive definite"),
        ("edge", "S", np.diag([1.0, 1.0, 1.0, 1.0, 1.0, -1.0]), "positive definite"),
        ("edge", "M0", -100.0, "edge M0"),
    ],
)
def test_validate_rejects_gain_matrices(section, name, value, fragment):
    sc = bearingform.scenario.builtin("paper-decentralized")
    setattr(getattr(sc, section), name, value)
    with pytest.raises(bearingform.exceptions.ConfigurationError, match=fragment):
        sc.validate()
