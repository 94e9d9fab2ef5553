"""
Centralized Riccati observer.
The stacked estimate x_hat = [p_hat; v_hat] follows A x_hat + B u + K (y - C x_hat) with K = kappa M C^T Q and
C = [L_B + C1, 0]. Since L_B(p) p = 0 the only measurable part of y is the leader block, so the innovation is
formed as C1 p - (L_B + C1) p_hat.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from bearingform.analysis import bearing_laplacian
from bearingform.dynamics import rk4_step
from bearingform.exceptions import ConfigurationError
from bearingform.graph import FormationGraph
from bearingform.riccati import (
    as_matrix,
    check_conditioning,
    cre_rate,
    double_integrator,
    gain_rate,
    stable_substeps,
    symmetrize,
)
from bearingform.sensing import MeasurementSet

log = logging.getLogger(__file__)

MatrixSpec = Union[float, np.ndarray]


@dataclass
class CentralizedGains:
    kappa: float = 10.0
    Q: MatrixSpec = 10.0
    S: MatrixSpec = 0.01
    M0: MatrixSpec = 1.0

    def __post_init__(self):
        if self.kappa < 0.5:
            raise ConfigurationError(f"centralized kappa must be >= 1/2, got {self.kappa}")


@dataclass
class CentralizedObserverState:
    p_hat: np.ndarray
    v_hat: np.ndarray
    M: np.ndarray
    gains: CentralizedGains = field(default_factory=CentralizedGains)
    t: float = 0.0

    @property
    def x_hat(self) -> np.ndarray:
        return np.concatenate([self.p_hat.reshape(-1), self.v_hat.reshape(-1)])


def initial_state(
    p_hat: np.ndarray, v_hat: np.ndarray, gains: CentralizedGains, t: float = 0.0
) -> CentralizedObserverState:
    p_hat = np.array(p_hat, dtype=float)
    v_hat = np.array(v_hat, dtype=float)
    nd = p_hat.size
    return CentralizedObserverState(
        p_hat=p_hat,
        v_hat=v_hat,
        M=as_matrix(gains.M0, 2 * nd, "M(0)"),
        gains=gains,
        t=t,
    )


def leader_block(n: int, d: int, leaders: Sequence[int] = (0,)) -> np.ndarray:
    """C1: identity blocks at the leaders, zeros elsewhere."""
    C1 = np.zeros((n * d, n * d))
    for i in leaders:
        C1[i * d : (i + 1) * d, i * d : (i + 1) * d] = np.eye(d)
    return C1


def output_matrix(
    s, g: FormationGraph, leaders: Sequence[int] = (0,)
) -> np.ndarray:
    snapshot = s.bearings if isinstance(s, MeasurementSet) else s
    nd = g.n * g.d
    L_B = bearing_laplacian(snapshot, g)
    return np.hstack([L_B + leader_block(g.n, g.d, leaders), np.zeros((nd, nd))])


class CentralizedDynamics:
    """Right-hand side of the observer and its CRE for a fixed formation size and gain set."""

    def __init__(self, g: FormationGraph, gains: CentralizedGains, leaders: Sequence[int]):
        nd = g.n * g.d
        self.g = g
        self.nd = nd
        self.gains = gains
        self.leaders = tuple(leaders)
        self.A, self.B = double_integrator(nd)
        self.C1 = leader_block(g.n, g.d, leaders)
        self.Q = as_matrix(gains.Q, nd, "Q")
        self.S = as_matrix(gains.S, 2 * nd, "S")

    def rates(
        self,
        x_hat: np.ndarray,
        M: np.ndarray,
        L_B: np.ndarray,
        leader_p: np.ndarray,
        u: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]:
        nd = self.nd
        LC = L_B + self.C1
        C = np.hstack([LC, np.zeros((nd, nd))])
        residual = self.C1 @ leader_p - LC @ x_hat[:nd]
        K = self.gains.kappa * M @ C.T @ self.Q
        x_dot = self.A @ x_hat + self.B @ np.reshape(u, -1) + K @ residual
        return x_dot, cre_rate(M, self.A, C, self.Q, self.S)

    def stiffness(self, M: np.ndarray, L_B: np.ndarray) -> float:
        C = np.hstack([L_B + self.C1, np.zeros((self.nd, self.nd))])
        return gain_rate(self.gains.kappa, M, self.Q, C)


def observer_step(
    obs: CentralizedObserverState,
    meas: MeasurementSet,
    u: Union[np.ndarray, Callable[[float], np.ndarray]],
    dt: float,
    g: FormationGraph,
    leaders: Sequence[int] = (0,),
) -> CentralizedObserverState:
    """Advance the observer one step with the measurement held over the step."""
    dyn = CentralizedDynamics(g, obs.gains, leaders)
    L_B = bearing_laplacian(meas.bearings, g)
    leader_p = meas.leader_vector(g.n, g.d)
    law = u if callable(u) else (lambda _t: u)

    def rates(t, x):
        return dyn.rates(x[0], x[1], L_B, leader_p, law(t))

    x, M = obs.x_hat, obs.M
    substeps = stable_substeps(dyn.stiffness(M, L_B), dt)
    h = dt / substeps
    t = obs.t
    for _ in range(substeps):
        x, M = rk4_step(rates, t, (x, M), h)
        M = symmetrize(M)
        t += h
    check_conditioning(M, obs.t + dt)
    nd = dyn.nd
    return replace(
        obs,
        p_hat=x[:nd].reshape(obs.p_hat.shape),
        v_hat=x[nd:].reshape(obs.v_hat.shape),
        M=M,
        t=obs.t + dt,
    )


def estimation_error(
    obs: CentralizedObserverState, p: np.ndarray, v: np.ndarray
) -> np.ndarray:
    return np.concatenate(
        [(obs.p_hat - p).reshape(-1), (obs.v_hat - v).reshape(-1)]
    )


def lyapunov(obs: CentralizedObserverState, p: np.ndarray, v: np.ndarray) -> float:
    """delta^T M^-1 delta."""
    delta = estimation_error(obs, p, v)
    return float(delta @ np.linalg.solve(obs.M, delta))


def state_count(n: int, d: int) -> int:
    """2dn estimate states plus the dn(2dn+1) independent entries of the symmetric M."""
    return 2 * d * n + d * n * (2 * d * n + 1)
