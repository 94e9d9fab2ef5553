import pytest
import numpy as np
from scipy.linalg import expm

import bearingform.dynamics
import bearingform.exceptions
import bearingform.riccati


def test_double_integrator():
    A, B = bearingform.riccati.double_integrator(2)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(A @ x, [3.0, 4.0, 0.0, 0.0])
    np.testing.assert_array_equal(B @ np.array([5.0, 6.0]), [0.0, 0.0, 5.0, 6.0])


def test_cre_without_output_matches_closed_form():
    A, _ = bearingform.riccati.double_integrator(1)
    C = np.zeros((1, 2))
    Q = np.eye(1)
    S = 0.01 * np.eye(2)
    M = np.eye(2)
    dt = 1e-3
    for i in range(1000):
        M = bearingform.dynamics.rk4_step(
            lambda t, X: bearingform.riccati.cre_rate(X, A, C, Q, S), i * dt, M, dt
        )
    expected = np.array([[2.0 + 1 / 3 * 0.01 + 0.01, 1.005], [1.005, 1.01]])
    np.testing.assert_allclose(M, expected, atol=1e-6)
    Phi = expm(A)
    np.testing.assert_allclose(Phi @ Phi.T + 0.01 * np.array([[4 / 3, 0.5], [0.5, 1]]), M, atol=1e-6)


def test_cre_output_shrinks_observed_block():
    A, _ = bearingform.riccati.double_integrator(1)
    C = np.array([[1.0, 0.0]])
    rate = bearingform.riccati.cre_rate(np.eye(2), A, C, 10 * np.eye(1), 0.01 * np.eye(2))
    assert rate[0, 0] < 0


@pytest.mark.parametrize(
    "value,dim,expected",
    [
        (10.0, 2, 10 * np.eye(2)),
        (np.diag([1.0, 2.0]), 2, np.diag([1.0, 2.0])),
    ],
)
def test_as_matrix(value, dim, expected):
    np.testing.assert_array_equal(bearingform.riccati.as_matrix(value, dim), expected)


@pytest.mark.parametrize(
    "value,fragment",
    [
        (-1.0, "positive"),
        (np.eye(3), "2x2"),
        (np.array([[1.0, 0.5], [0.0, 1.0]]), "symmetric"),
        (np.diag([1.0, -1.0]), "positive definite"),
    ],
)
def test_as_matrix_rejects(value, fragment):
    with pytest.raises(bearingform.exceptions.ConfigurationError, match=fragment):
        bearingform.riccati.as_matrix(value, 2, "Q")


def test_check_conditioning():
    assert bearingform.riccati.check_conditioning(np.eye(3)) == 1.0
    with pytest.raises(bearingform.exceptions.ConditioningError, match="M_k") as e:
        bearingform.riccati.check_conditioning(np.diag([1.0, 1e-12]), 4.5, what="M_k")
    assert e.value.t == 4.5


def test_symmetrize_stack():
    M = np.array([[[1.0, 2.0], [0.0, 1.0]]])
    np.testing.assert_array_equal(bearingform.riccati.symmetrize(M), [[[1.0, 1.0], [1.0, 1.0]]])


@pytest.mark.parametrize(
    "rate,dt,expected",
    [
        (0.0, 1e-3, 1),
        (1000.0, 1e-3, 1),
        (10000.0, 1e-3, 4),
        (float("inf"), 1e-3, 1),
    ],
)
def test_stable_substeps(rate, dt, expected):
    assert bearingform.riccati.stable_substeps(rate, dt) == expected


def test_gain_rate_bounds_edge_observer():
    C = np.hstack([np.eye(3), np.zeros((3, 3))])
    rate = bearingform.riccati.gain_rate(10.0, 100 * np.eye(6), 10 * np.eye(3), C)
    assert rate == pytest.approx(1e4)


def test_observability_of_position_output():
    A, _ = bearingform.riccati.double_integrator(3)
    C = np.hstack([np.eye(3), np.zeros((3, 3))])
    assert np.linalg.matrix_rank(bearingform.riccati.observability_matrix(A, C)) == 6
    W = bearingform.riccati.observability_gramian(A, [C] * 1001, 1e-3)
    assert np.linalg.eigvalsh(W)[0] > 0
