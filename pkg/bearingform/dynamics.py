"""
Double integrator plant and reference trajectories.
Integration is fixed-step RK4. Inputs given as callables are re-evaluated at every stage.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Type, Union

import numpy as np

from bearingform.exceptions import ConfigurationError, NonFiniteStateError

log = logging.getLogger(__file__)

DEFAULT_DT = 1e-3

State = Union[np.ndarray, Tuple]
InputLaw = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class AgentState:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)


def stack(states: Sequence[AgentState]) -> Tuple[np.ndarray, np.ndarray]:
    return np.array([s.p for s in states]), np.array([s.v for s in states])


def unstack(p: np.ndarray, v: np.ndarray) -> List[AgentState]:
    return [AgentState(pi.copy(), vi.copy()) for pi, vi in zip(p, v)]


def _axpy(x: State, a: float, k: State) -> State:
    if x is None:
        return None
    if isinstance(x, tuple):
        return tuple(_axpy(xi, a, ki) for xi, ki in zip(x, k))
    return x + a * k


def _combine(x: State, dt: float, k1, k2, k3, k4) -> State:
    if x is None:
        return None
    if isinstance(x, tuple):
        return tuple(
            _combine(xi, dt, a, b, c, e) for xi, a, b, c, e in zip(x, k1, k2, k3, k4)
        )
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(f: Callable[[float, State], State], t: float, x: State, dt: float) -> State:
    """One classical Runge-Kutta step; x may be an array or a nested tuple of arrays (None entries skipped)."""
    k1 = f(t, x)
    k2 = f(t + dt / 2, _axpy(x, dt / 2, k1))
    k3 = f(t + dt / 2, _axpy(x, dt / 2, k2))
    k4 = f(t + dt, _axpy(x, dt, k3))
    return _combine(x, dt, k1, k2, k3, k4)


def check_finite(t: float, **arrays: np.ndarray):
    for name, arr in arrays.items():
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NonFiniteStateError(f"non-finite values in {name}", t)


def plant_rates(v: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return v, u


def step(
    states: Sequence[AgentState],
    inputs: Union[np.ndarray, InputLaw],
    dt: float,
    t: float = 0.0,
) -> List[AgentState]:
    if dt <= 0:
        raise ConfigurationError(f"step size must be positive, got {dt}")
    p, v = stack(states)
    law = inputs if callable(inputs) else (lambda _t, _p, _v: np.asarray(inputs, float))

    def rates(tau, x):
        u = np.asarray(law(tau, *x), dtype=float).reshape(p.shape)
        check_finite(tau, input=u)
        return plant_rates(x[1], u)

    p, v = rk4_step(rates, t, (p, v), dt)
    check_finite(t + dt, position=p, velocity=v)
    return unstack(p, v)


@dataclass(frozen=True, eq=False)
class ReferenceSample:
    t: float
    p: np.ndarray
    v: np.ndarray
    u: np.ndarray


class ReferenceTrajectory:
    """Desired positions with their exact first and second derivatives."""

    n: int
    d: int

    def __call__(self, t: float) -> ReferenceSample:
        raise NotImplementedError


@dataclass
class DiagonalSweepReference(ReferenceTrajectory):
    """
    Agent 1 oscillates along the diagonal of the z = 0 plane, r + (r/2)sin(t/f) on both x and y,
    agents 2-4 sit at [0, r], [0, 0] and [r, 0].
    """

    r: float = 2 * math.sqrt(2)
    f: float = 1 / (2 * math.pi)
    d: int = 3
    n: int = 4

    def __post_init__(self):
        if self.d < 2:
            raise ConfigurationError("the diagonal sweep reference needs d >= 2")
        self._fixed = np.zeros((self.n, self.d))
        self._fixed[1, 1] = self.r
        self._fixed[3, 0] = self.r

    def __call__(self, t: float) -> ReferenceSample:
        r, f = self.r, self.f
        w = 1 / f
        p = self._fixed.copy()
        v = np.zeros_like(p)
        u = np.zeros_like(p)
        p[0, :2] = r + (r / 2) * math.sin(w * t)
        v[0, :2] = (r / 2) * w * math.cos(w * t)
        u[0, :2] = -(r / 2) * w * w * math.sin(w * t)
        return ReferenceSample(t=t, p=p, v=v, u=u)


@dataclass
class StaticReference(ReferenceTrajectory):
    positions: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.n, self.d = self.positions.shape

    def __call__(self, t: float) -> ReferenceSample:
        zeros = np.zeros_like(self.positions)
        return ReferenceSample(t=t, p=self.positions.copy(), v=zeros, u=zeros.copy())


@dataclass
class OrbitReference(ReferenceTrajectory):
    """Static positions with agent `agent` circling its nominal point in the first two axes."""

    positions: np.ndarray = None
    agent: int = 0
    radius: float = 1.0
    period: float = 2 * math.pi

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.n, self.d = self.positions.shape

    def __call__(self, t: float) -> ReferenceSample:
        w = 2 * math.pi / self.period
        a = self.radius
        p = self.positions.copy()
        v = np.zeros_like(p)
        u = np.zeros_like(p)
        c, s = math.cos(w * t), math.sin(w * t)
        p[self.agent, :2] += a * np.array([c, s])
        v[self.agent, :2] = a * w * np.array([-s, c])
        u[self.agent, :2] = -a * w * w * np.array([c, s])
        return ReferenceSample(t=t, p=p, v=v, u=u)


trajectories: Dict[str, Type[ReferenceTrajectory]] = {
    "diagonal-sweep": DiagonalSweepReference,
    "static": StaticReference,
    "orbit": OrbitReference,
}


def make_reference(name: str, **params) -> ReferenceTrajectory:
    try:
        cls = trajectories[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown reference trajectory {name!r}, choose from {sorted(trajectories)}"
        ) from None
    return cls(**params)


def diagonal_sweep(t: float) -> ReferenceSample:
    return DiagonalSweepReference()(t)


def reference_consistency(
    ref: ReferenceTrajectory, times: Sequence[float], h: float = 1e-5
) -> Tuple[float, float]:
    """Largest central-difference mismatch of (p -> v, v -> u) over the given times."""
    dv = du = 0.0
    for t in times:
        ahead, behind, now = ref(t + h), ref(t - h), ref(t)
        dv = max(dv, np.abs((ahead.p - behind.p) / (2 * h) - now.v).max())
        du = max(du, np.abs((ahead.v - behind.v) / (2 * h) - now.u).max())
    return dv, du
