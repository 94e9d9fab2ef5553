import pytest
import numpy as np

import bearingform.analysis
import bearingform.centralized
import bearingform.dynamics
import bearingform.exceptions
import bearingform.graph
import bearingform.sensing


@pytest.fixture
def triangle():
    return bearingform.graph.build_graph(3, [(1, 2), (2, 3), (1, 3)], 2)


@pytest.fixture
def static_meas(triangle):
    p = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 1.5]])
    snapshot = bearingform.analysis.bearings(p, triangle)
    source = bearingform.sensing.NoiseSource(bearingform.sensing.NoiseModel(), triangle.m, 2)
    leader = bearingform.dynamics.AgentState(p[0], np.zeros(2))
    return p, bearingform.sensing.measure(snapshot, {0: leader}, source)


def test_gains_lower_bound():
    with pytest.raises(bearingform.exceptions.ConfigurationError, match="1/2"):
        bearingform.centralized.CentralizedGains(kappa=0.4)


def test_initial_state(triangle):
    obs = bearingform.centralized.initial_state(np.zeros((3, 2)), np.ones((3, 2)), bearingform.centralized.CentralizedGains())
    np.testing.assert_array_equal(obs.M, np.eye(12))
    assert obs.x_hat.shape == (12,)
    np.testing.assert_array_equal(obs.x_hat[6:], 1.0)


def test_leader_block_multiple_leaders():
    C1 = bearingform.centralized.leader_block(3, 2, [0, 2])
    np.testing.assert_array_equal(np.diag(C1), [1, 1, 0, 0, 1, 1])


def test_output_matrix(triangle, static_meas):
    _, meas = static_meas
    C = bearingform.centralized.output_matrix(meas, triangle)
    L_B = bearingform.analysis.bearing_laplacian(meas.bearings, triangle)
    assert C.shape == (6, 12)
    np.testing.assert_allclose(C[:, :6], L_B + bearingform.centralized.leader_block(3, 2))
    np.testing.assert_array_equal(C[:, 6:], 0)


def test_truth_is_a_fixed_point(triangle, static_meas):
    p, meas = static_meas
    obs = bearingform.centralized.initial_state(p, np.zeros((3, 2)), bearingform.centralized.CentralizedGains())
    for _ in range(50):
        obs = bearingform.centralized.observer_step(obs, meas, np.zeros((3, 2)), 1e-2, triangle)
    np.testing.assert_allclose(obs.p_hat, p, atol=1e-12)
    np.testing.assert_allclose(obs.v_hat, 0, atol=1e-12)
    assert obs.t == pytest.approx(0.5)
    np.testing.assert_allclose(obs.M, obs.M.T)


def test_lyapunov_non_increasing(triangle, static_meas):
    p, meas = static_meas
    gains = bearingform.centralized.CentralizedGains()
    obs = bearingform.centralized.initial_state(p + [[0.5, -0.3], [0.2, 0.1], [-1.0, 0.4]], np.ones((3, 2)), gains)
    v = np.zeros((3, 2))
    values = [bearingform.centralized.lyapunov(obs, p, v)]
    for _ in range(300):
        obs = bearingform.centralized.observer_step(obs, meas, np.zeros((3, 2)), 1e-2, triangle)
        values.append(bearingform.centralized.lyapunov(obs, p, v))
    values = np.array(values)
    assert (np.diff(values) <= 1e-8 * np.maximum(values[:-1], 1.0)).all()
    assert values[-1] < values[0]


def test_leader_anchors_translation(triangle, static_meas):
    p, meas = static_meas
    shift = np.tile([1.0, -1.0], (3, 1))
    obs = bearingform.centralized.initial_state(p + shift, np.zeros((3, 2)), bearingform.centralized.CentralizedGains())
    before = np.linalg.norm(bearingform.centralized.estimation_error(obs, p, np.zeros((3, 2))))
    for _ in range(2000):
        obs = bearingform.centralized.observer_step(obs, meas, np.zeros((3, 2)), 1e-2, triangle)
    # the leader's own estimate is measured directly
    assert np.linalg.norm(obs.p_hat[0] - p[0]) < 0.05
    assert np.linalg.norm(bearingform.centralized.estimation_error(obs, p, np.zeros((3, 2)))) < before


def test_stiffness_splits_step(triangle, static_meas):
    _, meas = static_meas
    gains = bearingform.centralized.CentralizedGains(M0=100.0)
    dyn = bearingform.centralized.CentralizedDynamics(triangle, gains, [0])
    L_B = bearingform.analysis.bearing_laplacian(meas.bearings, triangle)
    assert dyn.stiffness(100 * np.eye(12), L_B) > 1e4


def test_state_count():
    assert bearingform.centralized.state_count(4, 3) == 24 + 12 * 25
