"""
Bearing geometry and excitation analysis.
Windowed averages are computed with the trapezoid rule at the sampling step of the trace, every window
[t, t + T] that fits inside the trace is a candidate and the excitation level is the worst one.
"""
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import cholesky, null_space, solve_triangular

from bearingform.exceptions import (
    ConfigurationError,
    DegenerateBearingError,
    NormalizationError,
)
from bearingform.graph import (
    FormationGraph,
    is_connected,
    laplacian,
    translation_basis,
)

log = logging.getLogger(__file__)

COLLISION_TOL = 1e-6
PE_THRESHOLD = 1e-3
UNIT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BearingSnapshot:
    t: float
    bearings: Mapping[int, np.ndarray]

    def __post_init__(self):
        for k, g in self.bearings.items():
            if abs(np.linalg.norm(g) - 1.0) > UNIT_TOL:
                raise NormalizationError(f"bearing of edge {k} is not a unit vector")

    def __getitem__(self, k: int) -> np.ndarray:
        try:
            return self.bearings[k]
        except KeyError:
            raise ConfigurationError(f"snapshot at t={self.t} has no edge {k}") from None

    def as_array(self, m: int) -> np.ndarray:
        return np.array([self[k] for k in range(m)])


@dataclass
class PEReport:
    window: float
    edge_levels: Dict[int, float]
    mu: float
    pe_edges: FrozenSet[int]
    bpe: bool
    threshold: float = PE_THRESHOLD
    reason: str = ""

    def to_dict(self, g: Optional[FormationGraph] = None) -> dict:
        name = g.label if g is not None else str
        return {
            "window": self.window,
            "threshold": self.threshold,
            "mu": self.mu,
            "bpe": self.bpe,
            "reason": self.reason,
            "edge_levels": {name(k): level for k, level in self.edge_levels.items()},
            "pe_edges": sorted(name(k) for k in self.pe_edges),
        }


def projector(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if abs(np.linalg.norm(y) - 1.0) > 1e-9:
        raise NormalizationError(f"cannot project onto non-unit vector {y}")
    return np.eye(y.size) - np.outer(y, y)


def projectors(G: np.ndarray) -> np.ndarray:
    """Stacked I - g g^T for an (..., d) array of unit vectors."""
    d = G.shape[-1]
    return np.eye(d) - G[..., :, None] * G[..., None, :]


def _positions(p: np.ndarray, g: FormationGraph) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(g.n, g.d)


def edge_vectors(p: np.ndarray, g: FormationGraph) -> np.ndarray:
    """p_ij = p_j - p_i for every oriented edge (i, j), shape (m, d)."""
    P = _positions(p, g)
    return P[g.heads] - P[g.tails]


def min_edge_length(p: np.ndarray, g: FormationGraph) -> float:
    return float(np.linalg.norm(edge_vectors(p, g), axis=1).min())


def bearings(p: np.ndarray, g: FormationGraph, t: float = 0.0) -> BearingSnapshot:
    rel = edge_vectors(p, g)
    dist = np.linalg.norm(rel, axis=1)
    for k in np.flatnonzero(dist <= COLLISION_TOL):
        raise DegenerateBearingError(
            f"endpoints of edge {g.label(k)} coincide (|p_ij|={dist[k]:.3g})"
        )
    unit = rel / dist[:, None]
    return BearingSnapshot(t=t, bearings={k: unit[k] for k in range(g.m)})


def _edge_blocks(blocks: np.ndarray, g: FormationGraph) -> np.ndarray:
    """H_bar^T diag(blocks) H_bar assembled block by block."""
    d = g.d
    out = np.zeros((g.n * d, g.n * d))
    for k, (i, j) in enumerate(g.edges):
        B = blocks[k]
        si, sj = slice(i * d, (i + 1) * d), slice(j * d, (j + 1) * d)
        out[si, si] += B
        out[sj, sj] += B
        out[si, sj] -= B
        out[sj, si] -= B
    return out


def bearing_laplacian(s: BearingSnapshot, g: FormationGraph) -> np.ndarray:
    return _edge_blocks(projectors(s.as_array(g.m)), g)


def pseudo_bearing_laplacian(
    g: FormationGraph, pe_edges: Iterable[int], s: BearingSnapshot
) -> np.ndarray:
    pe_edges = set(pe_edges)
    unknown = pe_edges - set(range(g.m))
    if unknown:
        raise ConfigurationError(f"unknown PE edge indices {sorted(unknown)}")
    blocks = np.array(
        [np.eye(g.d) if k in pe_edges else projector(s[k]) for k in range(g.m)]
    )
    return _edge_blocks(blocks, g)


def window_steps(dt: float, T: float) -> int:
    return max(1, int(round(T / dt)))


def windowed_averages(
    samples: np.ndarray, dt: float, T: float, stride: int = 1
) -> np.ndarray:
    """(1/T) * integral over [t_i, t_i + T] of the sampled signal, for every window start t_i."""
    samples = np.asarray(samples, dtype=float)
    w = window_steps(dt, T)
    if samples.shape[0] - 1 < w:
        raise ConfigurationError(
            f"window T={T} is longer than the signal ({(samples.shape[0] - 1) * dt:.6g}s)"
        )
    running = cumulative_trapezoid(samples, dx=dt, axis=0, initial=0)
    starts = np.arange(0, samples.shape[0] - w, stride)
    return (running[starts + w] - running[starts]) / (w * dt)


def pe_level(
    samples: np.ndarray, dt: float, T: float, stride: int = 1
) -> float:
    averages = windowed_averages(samples, dt, T, stride)
    return float(max(np.linalg.eigvalsh(averages)[:, 0].min(), 0.0))


def non_colinearity_level(
    y_i: np.ndarray, y_j: np.ndarray, dt: float, T: float, stride: int = 1
) -> float:
    """Worst windowed average of 1 - |y_i . y_j|; positive for persistently non-colinear directions."""
    gap = 1.0 - np.abs(np.einsum("td,td->t", y_i, y_j))
    return float(windowed_averages(gap, dt, T, stride).min())


def bpe_check(
    traces: Sequence[BearingSnapshot],
    g: FormationGraph,
    T: float,
    threshold: float = PE_THRESHOLD,
    stride: int = 1,
) -> PEReport:
    if len(traces) < 2:
        raise ConfigurationError("a bearing trace needs at least two snapshots")
    dt = traces[1].t - traces[0].t
    G = np.array([s.as_array(g.m) for s in traces])
    return bpe_report(G, dt, g, T, threshold, stride)


def bpe_report(
    G: np.ndarray,
    dt: float,
    g: FormationGraph,
    T: float,
    threshold: float = PE_THRESHOLD,
    stride: int = 1,
) -> PEReport:
    """Same as bpe_check for bearings sampled every dt and stacked as a (steps, m, d) array."""
    Pi = projectors(G)
    edge_levels = {
        k: pe_level(Pi[:, k], dt, T, stride) for k in range(g.m)
    }
    pe_edges = frozenset(k for k, level in edge_levels.items() if level > threshold)
    if not is_connected(g):
        log.warning("Formation graph is disconnected, it cannot be BPE")
        return PEReport(
            window=T,
            edge_levels=edge_levels,
            mu=0.0,
            pe_edges=pe_edges,
            bpe=False,
            threshold=threshold,
            reason="graph is not connected",
        )
    # the pencil (avg L_B, L) restricted to the complement of the translations
    Phi = null_space(translation_basis(g.n, g.d).T)
    L_red = Phi.T @ laplacian(g) @ Phi
    L_B = np.array([_edge_blocks(P, g) for P in Pi])
    averages = windowed_averages(L_B, dt, T, stride)
    R_inv = solve_triangular(cholesky(L_red, lower=True), np.eye(len(L_red)), lower=True)
    whiten = R_inv @ Phi.T
    pencil = whiten @ averages @ whiten.T
    mu = float(max(np.linalg.eigvalsh(pencil)[:, 0].min(), 0.0))
    bpe = mu > threshold
    return PEReport(
        window=T,
        edge_levels=edge_levels,
        mu=mu,
        pe_edges=pe_edges,
        bpe=bpe,
        threshold=threshold,
        reason="" if bpe else f"formation excitation {mu:.3g} <= {threshold:.3g}",
    )


def pe_edge_bound(g: FormationGraph, ibr_edge_count: Optional[int] = None) -> int:
    """Minimum number of PE bearings a BPE formation with this topology needs."""
    if ibr_edge_count is not None and not (g.n - 1 <= g.m < ibr_edge_count):
        log.warning(
            f"edge count m={g.m} is outside [{g.n - 1}, {ibr_edge_count}), PE edge bound does not apply"
        )
    return max(g.d * (g.n - 1) - (g.d - 1) * g.m, 0)


def is_infinitesimally_rigid(
    s: BearingSnapshot, g: FormationGraph, tol: float = 1e-9
) -> bool:
    rank = np.linalg.matrix_rank(bearing_laplacian(s, g), tol=tol)
    return bool(rank == g.d * g.n - g.d - 1)


def translation_component(delta_p: np.ndarray, n: int, d: int) -> np.ndarray:
    """Orthogonal projection of a stacked nd-vector onto Span(1 (x) I_d)."""
    U = translation_basis(n, d)
    return U @ (U.T @ np.asarray(delta_p).reshape(-1)) / n
