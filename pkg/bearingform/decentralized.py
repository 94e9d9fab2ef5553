"""
Cascaded decentralized observer.
First level: one Riccati observer per PE edge estimating the relative state (p_bar_k, v_bar_k), run by the initial
node of the edge. The stored estimate follows the bearing orientation p_bar_k = p_j - p_i of edge (i, j), so its
input is u_j - u_i. Second level: every agent runs a Luenberger-type observer of its own position and velocity,
corrected by its neighbors' estimates and, for PE edges, by the edge observers.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from bearingform.analysis import BearingSnapshot, projector, pseudo_bearing_laplacian
from bearingform.centralized import leader_block
from bearingform.dynamics import rk4_step
from bearingform.exceptions import ConfigurationError, StaleDataError
from bearingform.graph import FormationGraph
from bearingform.network import EstimateMessage
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
class EdgeGains:
    kappa: float = 10.0
    Q: MatrixSpec = 10.0
    S: MatrixSpec = 0.01
    M0: MatrixSpec = 100.0

    def __post_init__(self):
        if self.kappa < 0.5:
            raise ConfigurationError(f"edge observer kappa must be >= 1/2, got {self.kappa}")


@dataclass
class EdgeObserverState:
    k: int
    p_bar_hat: np.ndarray
    v_bar_hat: np.ndarray
    M: np.ndarray
    gains: EdgeGains = field(default_factory=EdgeGains)
    t: float = 0.0

    @property
    def x_hat(self) -> np.ndarray:
        return np.concatenate([self.p_bar_hat, self.v_bar_hat])


class EdgeDynamics:
    def __init__(self, d: int, gains: EdgeGains):
        self.d = d
        self.gains = gains
        self.A, self.B = double_integrator(d)
        self.Q = as_matrix(gains.Q, d, "Q_k")
        self.S = as_matrix(gains.S, 2 * d, "S_k")

    def output_matrix(self, g_k: np.ndarray) -> np.ndarray:
        """C_k = pi_g [I_d 0_d]."""
        return np.hstack([projector(g_k), np.zeros((self.d, self.d))])

    def rates(
        self, x: np.ndarray, M: np.ndarray, g_k: np.ndarray, u_bar: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        # C_k x_bar = pi_g p_bar = 0, so the innovation is -C_k x_hat
        C = self.output_matrix(g_k)
        K = self.gains.kappa * M @ C.T @ self.Q
        x_dot = self.A @ x + self.B @ u_bar - K @ (C @ x)
        return x_dot, cre_rate(M, self.A, C, self.Q, self.S)

    def stiffness(self, M: np.ndarray, g_k: np.ndarray) -> float:
        return gain_rate(self.gains.kappa, M, self.Q, self.output_matrix(g_k))


def initial_edge_state(
    k: int,
    p_bar_hat: np.ndarray,
    v_bar_hat: np.ndarray,
    gains: EdgeGains,
    t: float = 0.0,
) -> EdgeObserverState:
    p_bar_hat = np.array(p_bar_hat, dtype=float)
    return EdgeObserverState(
        k=k,
        p_bar_hat=p_bar_hat,
        v_bar_hat=np.array(v_bar_hat, dtype=float),
        M=as_matrix(gains.M0, 2 * p_bar_hat.size, "M_k(0)"),
        gains=gains,
        t=t,
    )


def edge_observer_step(
    e: EdgeObserverState, g_k: np.ndarray, u_bar: np.ndarray, dt: float
) -> EdgeObserverState:
    d = e.p_bar_hat.size
    dyn = EdgeDynamics(d, e.gains)
    u_bar = np.asarray(u_bar, dtype=float)

    def rates(t, x):
        return dyn.rates(x[0], x[1], g_k, u_bar)

    x, M = e.x_hat, e.M
    substeps = stable_substeps(dyn.stiffness(M, g_k), dt)
    h = dt / substeps
    for i in range(substeps):
        x, M = rk4_step(rates, e.t + i * h, (x, M), h)
        M = symmetrize(M)
    check_conditioning(M, e.t + dt, what=f"M_{e.k}")
    return replace(e, p_bar_hat=x[:d], v_bar_hat=x[d:], M=M, t=e.t + dt)


def edge_lyapunov(e: EdgeObserverState, p_bar: np.ndarray, v_bar: np.ndarray) -> float:
    delta = np.concatenate([e.p_bar_hat - p_bar, e.v_bar_hat - v_bar])
    return float(delta @ np.linalg.solve(e.M, delta))


@dataclass
class DistributedGains:
    kappa_o1: float = 10.0
    kappa_o2: float = 5.0
    # leader correction -(p_hat_1 - p_1) with unit gain in both rows instead of the kappa-weighted one
    unit_leader_gain: bool = False

    def __post_init__(self):
        if self.kappa_o1 <= 0 or self.kappa_o2 <= 0:
            raise ConfigurationError(
                f"distributed observer gains must be positive, got ({self.kappa_o1}, {self.kappa_o2})"
            )


@dataclass
class DistributedObserverState:
    p_hat: np.ndarray
    v_hat: np.ndarray
    gains: DistributedGains = field(default_factory=DistributedGains)
    t: float = 0.0


def relative_estimate(
    g: FormationGraph, i: int, k: int, p_bar_hat: np.ndarray
) -> np.ndarray:
    """Estimate of p_i - p_j from the stored p_bar_k = p_head - p_tail."""
    return -g.orientation(i, k) * p_bar_hat


def _bearing_of(bearings: Union[MeasurementSet, BearingSnapshot], k: int) -> np.ndarray:
    if isinstance(bearings, MeasurementSet):
        return bearings.bearing(k)
    return bearings[k]


def fused_correction(
    i: int,
    inbox: Sequence[EstimateMessage],
    own_p_hat: np.ndarray,
    g: FormationGraph,
    pe_edges: Iterable[int],
    edge_estimates: Mapping[int, np.ndarray],
    bearings: Union[MeasurementSet, BearingSnapshot],
) -> np.ndarray:
    """
    c_i = sum over neighbors j of sigma_ij (p_hat_ij - (p_hat_i - p_hat_j)), with sigma_ij = I and the edge
    observer estimate on PE edges, sigma_ij = pi_g and p_hat_ij = 0 otherwise.
    """
    pe_edges = set(pe_edges)
    senders = {msg.sender: msg for msg in inbox}
    c = np.zeros(g.d)
    for j in g.neighbors(i):
        msg = senders.get(j)
        if msg is None:
            raise StaleDataError(f"agent {i + 1} has no message from neighbor {j + 1}")
        k = g.edge_index(i, j)
        diff = own_p_hat - msg.p_hat
        if k in pe_edges:
            estimate = edge_estimates.get(k)
            if estimate is None:
                estimate = msg.edge_estimates.get(k)
            if estimate is None:
                raise StaleDataError(
                    f"agent {i + 1} has no edge estimate for {g.label(k)}"
                )
            c += relative_estimate(g, i, k, estimate) - diff
        else:
            c -= projector(_bearing_of(bearings, k)) @ diff
    return c


def leader_correction(
    p_hat_i: np.ndarray, p_i: np.ndarray, gains: DistributedGains
) -> Tuple[np.ndarray, np.ndarray]:
    err = p_i - p_hat_i
    if gains.unit_leader_gain:
        return err, err.copy()
    return gains.kappa_o1 * err, gains.kappa_o2 * err


def distributed_rates(
    p_hat: np.ndarray,
    v_hat: np.ndarray,
    corrections: np.ndarray,
    u: np.ndarray,
    leader_positions: Mapping[int, np.ndarray],
    gains: DistributedGains,
) -> Tuple[np.ndarray, np.ndarray]:
    p_dot = v_hat + gains.kappa_o1 * corrections
    v_dot = np.array(u, dtype=float) + gains.kappa_o2 * corrections
    for i, p_i in leader_positions.items():
        dp, dv = leader_correction(p_hat[i], p_i, gains)
        p_dot[i] += dp
        v_dot[i] += dv
    return p_dot, v_dot


def distributed_step(
    dos: DistributedObserverState,
    corrections: np.ndarray,
    leader_meas: Union[MeasurementSet, Mapping[int, np.ndarray]],
    u: np.ndarray,
    dt: float,
) -> DistributedObserverState:
    """Advance every agent's estimate one step with this round's corrections held over the step."""
    leaders = (
        leader_meas.leader_positions
        if isinstance(leader_meas, MeasurementSet)
        else leader_meas
    )
    corrections = np.asarray(corrections, dtype=float)

    def rates(t, x):
        return distributed_rates(x[0], x[1], corrections, u, leaders, dos.gains)

    p_hat, v_hat = rk4_step(rates, dos.t, (dos.p_hat, dos.v_hat), dt)
    return replace(dos, p_hat=p_hat, v_hat=v_hat, t=dos.t + dt)


def error_dynamics_matrix(
    g: FormationGraph,
    pe_edges: Iterable[int],
    snapshot: BearingSnapshot,
    gains: DistributedGains,
    leaders: Sequence[int] = (0,),
) -> np.ndarray:
    """A - Lambda C_bar for the distributed observer with exact edge estimates."""
    nd = g.n * g.d
    A, _ = double_integrator(nd)
    L_bar = pseudo_bearing_laplacian(g, pe_edges, snapshot)
    C1 = leader_block(g.n, g.d, leaders)
    if gains.unit_leader_gain:
        top, bottom = gains.kappa_o1 * L_bar + C1, gains.kappa_o2 * L_bar + C1
    else:
        top, bottom = gains.kappa_o1 * (L_bar + C1), gains.kappa_o2 * (L_bar + C1)
    correction = np.zeros((2 * nd, 2 * nd))
    correction[:nd, :nd] = top
    correction[nd:, :nd] = bottom
    return A - correction


def state_count(n: int, d: int, m_pe: int) -> int:
    return m_pe * (2 * d + d * (2 * d + 1)) + 2 * d * n


class DecentralizedObserver:
    """Both observer levels for one formation, evaluated from stacked arrays."""

    def __init__(
        self,
        g: FormationGraph,
        pe_edges: Iterable[int],
        edge_gains: EdgeGains,
        gains: DistributedGains,
        leaders: Sequence[int] = (0,),
    ):
        self.g = g
        self.pe_edges = tuple(sorted(set(pe_edges)))
        unknown = set(self.pe_edges) - set(range(g.m))
        if unknown:
            raise ConfigurationError(f"unknown PE edge indices {sorted(unknown)}")
        self.edge_gains = edge_gains
        self.gains = gains
        self.leaders = tuple(leaders)
        self.edge_dynamics = EdgeDynamics(g.d, edge_gains)
        self._slot = {k: s for s, k in enumerate(self.pe_edges)}

    def initial_edges(
        self, p_hat: np.ndarray, v_hat: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Edge estimates start from the differences of the agents' initial estimates."""
        d = self.g.d
        x = np.zeros((len(self.pe_edges), 2 * d))
        for s, k in enumerate(self.pe_edges):
            i, j = self.g.edges[k]
            x[s, :d] = p_hat[j] - p_hat[i]
            x[s, d:] = v_hat[j] - v_hat[i]
        M = np.array(
            [as_matrix(self.edge_gains.M0, 2 * d, "M_k(0)") for _ in self.pe_edges]
        ).reshape(len(self.pe_edges), 2 * d, 2 * d)
        return x, M

    def messages(
        self,
        t: float,
        p_hat: np.ndarray,
        v_hat: np.ndarray,
        u: np.ndarray,
        edge_x: np.ndarray,
        round_index: int = 0,
    ) -> List[EstimateMessage]:
        d = self.g.d
        out = []
        for i in range(self.g.n):
            owned = {
                k: edge_x[self._slot[k], :d].copy()
                for k in self.g.owned_edges(i)
                if k in self._slot
            }
            out.append(
                EstimateMessage(
                    sender=i,
                    t=t,
                    p_hat=p_hat[i].copy(),
                    v_hat=v_hat[i].copy(),
                    u=np.array(u[i], dtype=float),
                    edge_estimates=owned,
                    round=round_index,
                )
            )
        return out

    def rates(
        self,
        p_hat: np.ndarray,
        v_hat: np.ndarray,
        edge_x: np.ndarray,
        edge_M: np.ndarray,
        bearings: BearingSnapshot,
        mailbox: Mapping[int, Sequence[EstimateMessage]],
        u: np.ndarray,
        leader_positions: Mapping[int, np.ndarray],
    ):
        g, d = self.g, self.g.d
        edge_x_dot = np.zeros_like(edge_x)
        edge_M_dot = np.zeros_like(edge_M)
        for s, k in enumerate(self.pe_edges):
            owner, other = g.edges[k]
            peer = {msg.sender: msg for msg in mailbox[owner]}.get(other)
            if peer is None:
                raise StaleDataError(
                    f"owner of edge {g.label(k)} has no message from agent {other + 1}"
                )
            u_bar = peer.u - u[owner]
            edge_x_dot[s], edge_M_dot[s] = self.edge_dynamics.rates(
                edge_x[s], edge_M[s], bearings[k], u_bar
            )
        corrections = np.zeros((g.n, d))
        for i in range(g.n):
            own_edges = {
                k: edge_x[self._slot[k], :d] for k in g.owned_edges(i) if k in self._slot
            }
            corrections[i] = fused_correction(
                i, mailbox[i], p_hat[i], g, self.pe_edges, own_edges, bearings
            )
        p_dot, v_dot = distributed_rates(
            p_hat, v_hat, corrections, u, leader_positions, self.gains
        )
        return p_dot, v_dot, edge_x_dot, edge_M_dot

    def stiffness(self, edge_M: np.ndarray, bearings: BearingSnapshot) -> float:
        if not len(edge_M):
            return 0.0
        return max(
            self.edge_dynamics.stiffness(M, bearings[k])
            for M, k in zip(edge_M, self.pe_edges)
        )

    def edge_errors(
        self, edge_x: np.ndarray, p: np.ndarray, v: np.ndarray
    ) -> Dict[int, np.ndarray]:
        d = self.g.d
        out = {}
        for s, k in enumerate(self.pe_edges):
            i, j = self.g.edges[k]
            truth = np.concatenate([p[j] - p[i], v[j] - v[i]])
            out[k] = edge_x[s] - truth
        return out

    def edge_lyapunov(self, edge_x: np.ndarray, edge_M: np.ndarray, p, v) -> float:
        errors = self.edge_errors(edge_x, p, v)
        return float(
            sum(
                errors[k] @ np.linalg.solve(edge_M[s], errors[k])
                for s, k in enumerate(self.pe_edges)
            )
        )
