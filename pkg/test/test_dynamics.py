import math

import pytest
import numpy as np

import bearingform.dynamics
import bearingform.exceptions


def test_rk4_exponential_decay():
    x = np.array([1.0])
    for i in range(100):
        x = bearingform.dynamics.rk4_step(lambda t, y: -y, i * 0.01, x, 0.01)
    assert x[0] == pytest.approx(math.exp(-1.0), abs=1e-10)


def test_rk4_nested_state_skips_none():
    x = (np.array([1.0]), None, (np.array([2.0]),))
    out = bearingform.dynamics.rk4_step(
        lambda t, y: (np.zeros(1), None, (np.ones(1),)), 0.0, x, 0.5
    )
    assert out[1] is None
    assert out[0][0] == 1.0
    assert out[2][0][0] == pytest.approx(2.5)


def test_constant_input_is_exact():
    states = [bearingform.dynamics.AgentState([0.0, 1.0], [1.0, 0.0])]
    u = np.array([[0.0, -2.0]])
    for i in range(10):
        states = bearingform.dynamics.step(states, u, 0.1, t=i * 0.1)
    np.testing.assert_allclose(states[0].p, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(states[0].v, [1.0, -2.0], atol=1e-12)


def test_step_with_feedback_law():
    states = [bearingform.dynamics.AgentState([1.0, 0.0], [0.0, 0.0])]
    dt = 1e-3
    for i in range(5000):
        states = bearingform.dynamics.step(states, lambda t, p, v: -4 * p - 4 * v, dt, i * dt)
    assert np.linalg.norm(states[0].p) < 0.01


def test_step_rejects_bad_dt():
    states = [bearingform.dynamics.AgentState([0.0, 0.0], [0.0, 0.0])]
    with pytest.raises(bearingform.exceptions.ConfigurationError):
        bearingform.dynamics.step(states, np.zeros((1, 2)), 0.0)


def test_non_finite_input_aborts():
    states = [bearingform.dynamics.AgentState([0.0, 0.0], [0.0, 0.0])]
    with pytest.raises(bearingform.exceptions.NonFiniteStateError) as e:
        bearingform.dynamics.step(states, np.full((1, 2), np.nan), 0.1, t=2.0)
    assert e.value.t == 2.0
    assert str(e.value).startswith("t=2.000000s")


def test_stack_unstack():
    p = np.arange(6.0).reshape(3, 2)
    v = -p
    states = bearingform.dynamics.unstack(p, v)
    assert len(states) == 3
    p2, v2 = bearingform.dynamics.stack(states)
    np.testing.assert_array_equal(p2, p)
    np.testing.assert_array_equal(v2, v)


def test_diagonal_sweep_layout():
    r = 2 * math.sqrt(2)
    sample = bearingform.dynamics.diagonal_sweep(0.0)
    np.testing.assert_allclose(sample.p, [[r, r, 0], [0, r, 0], [0, 0, 0], [r, 0, 0]])
    quarter = bearingform.dynamics.diagonal_sweep(0.25)
    np.testing.assert_allclose(quarter.p[0], [1.5 * r, 1.5 * r, 0])
    np.testing.assert_allclose(quarter.v[0], 0, atol=1e-12)


@pytest.mark.parametrize(
    "name,params",
    [
        ("diagonal-sweep", {}),
        ("static", {"positions": [[0, 0], [1, 0], [0, 1]]}),
        ("orbit", {"positions": [[0, 0], [3, 0], [0, 3]], "agent": 1, "radius": 0.5}),
    ],
)
def test_reference_derivatives_consistent(name, params):
    ref = bearingform.dynamics.make_reference(name, **params)
    dv, du = bearingform.dynamics.reference_consistency(ref, np.linspace(0, 3, 13))
    assert dv < 1e-6
    assert du < 1e-6


def test_unknown_reference():
    with pytest.raises(bearingform.exceptions.ConfigurationError, match="unknown reference"):
        bearingform.dynamics.make_reference("spiral")
