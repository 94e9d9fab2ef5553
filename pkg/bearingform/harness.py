"""
Closed-loop simulation of a Scenario: plant, sensing, communication, observers and controller advanced together
by one composite RK4 step per dt. The noise draw of a step and, with link delay, the round delivered at its start
are held over the four stages; every continuous law is re-evaluated at each stage.
"""
import asyncio
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import linregress

from bearingform import centralized, decentralized
from bearingform.analysis import (
    COLLISION_TOL,
    PE_THRESHOLD,
    BearingSnapshot,
    PEReport,
    bearing_laplacian,
    bearings,
    bpe_report,
    min_edge_length,
    pe_edge_bound,
    pseudo_bearing_laplacian,
    window_steps,
)
from bearingform.centralized import CentralizedDynamics, leader_block
from bearingform.controller import control_all
from bearingform.decentralized import DecentralizedObserver
from bearingform.dynamics import check_finite, rk4_step
from bearingform.exceptions import (
    ConfigurationError,
    DegenerateBearingError,
    GraphValidationError,
    SimulationAbort,
)
from bearingform.graph import FormationGraph, build_graph, is_connected
from bearingform.network import MessageBus, Round, deliver
from bearingform.riccati import (
    check_conditioning,
    min_eigenvalue,
    stable_substeps,
    symmetrize,
)
from bearingform.scenario import Scenario, dump_scenario, load_scenario
from bearingform.sensing import NoiseSource, apply_noise

log = logging.getLogger(__file__)

AGGREGATES = ("dp", "dv", "pt", "vt", "lam_min", "cond", "lyap", "min_dist")
AGENT_FIELDS = ("p", "v", "phat", "vhat", "u")
# skip the Riccati warm-up when fitting exponential rates
FIT_SKIP_FRACTION = 0.1


def axis_names(d: int) -> Tuple[str, ...]:
    return tuple("xyz"[:d]) if d <= 3 else tuple(str(c) for c in range(d))


def trace_columns(n: int, d: int, m: int) -> List[str]:
    axes = axis_names(d)
    columns = ["t"]
    for i in range(1, n + 1):
        for prefix in AGENT_FIELDS:
            columns += [f"{prefix}{i}_{a}" for a in axes]
    for k in range(1, m + 1):
        columns += [f"g{k}_{a}" for a in axes] + [f"dbar{k}"]
    return columns + list(AGGREGATES)


@dataclass(frozen=True, eq=False)
class TraceRecord:
    t: float
    p: np.ndarray
    v: np.ndarray
    p_hat: np.ndarray
    v_hat: np.ndarray
    u: np.ndarray
    bearings: np.ndarray
    dbar: np.ndarray
    dp: float
    dv: float
    pt: float
    vt: float
    lam_min: float
    cond: float
    lyap: float
    min_dist: float

    def values(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.t],
                np.hstack([self.p, self.v, self.p_hat, self.v_hat, self.u]).ravel(),
                np.hstack([self.bearings, self.dbar[:, None]]).ravel(),
                [self.dp, self.dv, self.pt, self.vt, self.lam_min, self.cond, self.lyap, self.min_dist],
            ]
        )


@dataclass
class ScenarioChecks:
    graph: FormationGraph
    pe_edges: Tuple[int, ...]
    pe_source: str
    pe_edge_bound: int
    pseudo_laplacian_invertible: Optional[bool]
    state_counts: Dict[str, int]

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "pe_edges": [g.label(k) for k in self.pe_edges],
            "pe_source": self.pe_source,
            "pe_edge_bound": self.pe_edge_bound,
            "pseudo_laplacian_invertible": self.pseudo_laplacian_invertible,
            "state_counts": self.state_counts,
        }


@dataclass
class RunResult:
    scenario: Scenario
    trace: pd.DataFrame
    metrics: dict
    records: List[TraceRecord] = field(default_factory=list, repr=False)

    @property
    def aborted(self) -> bool:
        return self.metrics.get("abort") is not None


def reference_pe_edges(sc: Scenario, g: FormationGraph) -> Tuple[int, ...]:
    """Edges whose reference bearing is PE over two windows of the declared length."""
    ref = sc.build_reference()
    T = sc.pe.window
    dt = T / 200
    G = np.array(
        [bearings(ref(t).p, g, t).as_array(g.m) for t in np.arange(401) * dt]
    )
    report = bpe_report(G, dt, g, T, sc.pe.threshold)
    return tuple(sorted(report.pe_edges))


def validate_scenario(sc: Scenario) -> ScenarioChecks:
    """Everything that must hold before the first step; raises ScenarioError subclasses."""
    g = sc.validate()
    if not is_connected(g):
        raise GraphValidationError("formation graph is not connected")
    try:
        if sc.pe.edges is not None:
            pe_edges = tuple(sorted(g.find_edge(pair) for pair in sc.pe.edges))
            source = "declared"
        else:
            pe_edges = reference_pe_edges(sc, g)
            source = "reference"
            log.info(f"PE edges from the reference trajectory: {[g.label(k) for k in pe_edges]}")
        start = bearings(sc.build_reference()(0.0).p, g, 0.0)
    except DegenerateBearingError as e:
        raise ConfigurationError(f"reference trajectory is degenerate: {e}") from None
    bound = pe_edge_bound(g, sc.pe.ibr_edge_count)
    if len(pe_edges) < bound:
        log.warning(
            f"{len(pe_edges)} PE edges is below the {bound} a BPE formation with this topology needs"
        )
    invertible = None
    if sc.active_estimator == "decentralized":
        L_bar = pseudo_bearing_laplacian(g, pe_edges, start)
        L_bar += leader_block(g.n, g.d, sc.leader_indices)
        invertible = bool(np.linalg.matrix_rank(L_bar) == g.n * g.d)
        if not invertible:
            raise ConfigurationError(
                "pseudo-bearing Laplacian plus leader block is singular, "
                f"PE edges {[g.label(k) for k in pe_edges]} cannot localize the formation"
            )
    return ScenarioChecks(
        graph=g,
        pe_edges=pe_edges,
        pe_source=source,
        pe_edge_bound=bound,
        pseudo_laplacian_invertible=invertible,
        state_counts={
            "centralized": centralized.state_count(g.n, g.d),
            "decentralized": decentralized.state_count(g.n, g.d, len(pe_edges)),
        },
    )


class Simulation:
    """
    State tuple (p, v, x_hat, M, edge_x, edge_M, p_hat, v_hat); parts of observers that are not running stay None.
    """

    def __init__(self, sc: Scenario, checks: Optional[ScenarioChecks] = None):
        self.sc = sc
        self.checks = checks or validate_scenario(sc)
        self.g = g = self.checks.graph
        self.reference = sc.build_reference()
        self.leaders = sc.leader_indices
        self.noise = NoiseSource(sc.noise, g.m, g.d)
        self.centralized = None
        self.decentralized = None
        self.bus = None
        p, v, p_hat, v_hat = sc.initial_conditions(self.reference)
        x_hat = M = edge_x = edge_M = dist_p = dist_v = None
        if sc.active_estimator == "centralized":
            self.centralized = CentralizedDynamics(g, sc.centralized, self.leaders)
            obs = centralized.initial_state(p_hat, v_hat, sc.centralized)
            x_hat, M = obs.x_hat, obs.M
        elif sc.active_estimator == "decentralized":
            self.decentralized = DecentralizedObserver(
                g, self.checks.pe_edges, sc.edge, sc.distributed, self.leaders
            )
            edge_x, edge_M = self.decentralized.initial_edges(p_hat, v_hat)
            dist_p, dist_v = p_hat, v_hat
            if sc.delay:
                self.bus = MessageBus(g, sc.delay)
        self.x = (p, v, x_hat, M, edge_x, edge_M, dist_p, dist_v)
        self.t = 0.0
        self.index = 0
        self.records: List[TraceRecord] = []

    def estimates(self, x) -> Tuple[np.ndarray, np.ndarray]:
        p, v, x_hat, _, _, _, dist_p, dist_v = x
        if x_hat is not None:
            nd = self.g.n * self.g.d
            return x_hat[:nd].reshape(p.shape), x_hat[nd:].reshape(v.shape)
        if dist_p is not None:
            return dist_p, dist_v
        return p, v

    def measure(self, t: float, p: np.ndarray, draws) -> BearingSnapshot:
        try:
            true = bearings(p, self.g, t)
        except DegenerateBearingError as e:
            raise DegenerateBearingError(str(e), t) from None
        return apply_noise(true, self.sc.noise, draws)

    def control(self, t: float, x) -> np.ndarray:
        ref = self.reference(t)
        if not self.sc.is_control:
            return ref.u
        p_hat, v_hat = self.estimates(x)
        return control_all(p_hat, v_hat, ref, self.sc.controller)

    def rates(self, t: float, x, draws, held: Optional[Round]):
        p, v, x_hat, M, edge_x, edge_M, dist_p, dist_v = x
        measured = self.measure(t, p, draws)
        u = self.control(t, x)
        check_finite(t, input=u)
        out = [v, u, None, None, None, None, None, None]
        if self.centralized is not None:
            L_B = bearing_laplacian(measured, self.g)
            leader_p = np.zeros(p.size)
            for i in self.leaders:
                leader_p[i * self.g.d : (i + 1) * self.g.d] = p[i]
            out[2], out[3] = self.centralized.rates(x_hat, M, L_B, leader_p, u)
        if self.decentralized is not None:
            if held is None:
                mailbox = deliver(
                    self.decentralized.messages(t, dist_p, dist_v, u, edge_x), self.g
                )
            else:
                mailbox = held.mailbox
            p_dot, v_dot, edge_x_dot, edge_M_dot = self.decentralized.rates(
                dist_p,
                dist_v,
                edge_x,
                edge_M,
                measured,
                mailbox,
                u,
                {i: p[i] for i in self.leaders},
            )
            out[4:] = [edge_x_dot, edge_M_dot, p_dot, v_dot]
        return tuple(out)

    def substeps(self, x, measured: BearingSnapshot) -> int:
        rate = 0.0
        if self.centralized is not None:
            rate = self.centralized.stiffness(x[3], bearing_laplacian(measured, self.g))
        if self.decentralized is not None:
            rate = max(rate, self.decentralized.stiffness(x[5], measured))
        return stable_substeps(rate, self.sc.dt)

    def record(self, t: float, x, measured: BearingSnapshot) -> TraceRecord:
        p, v, x_hat, M, edge_x, edge_M, _, _ = x
        g = self.g
        ref = self.reference(t)
        p_hat, v_hat = self.estimates(x)
        dbar = np.zeros(g.m)
        lam = cond = lyap = float("nan")
        if M is not None:
            obs = centralized.CentralizedObserverState(p_hat, v_hat, M)
            lam = min_eigenvalue(M)
            cond = float(np.linalg.cond(M))
            lyap = centralized.lyapunov(obs, p, v)
        if self.decentralized is not None and len(self.decentralized.pe_edges):
            for k, err in self.decentralized.edge_errors(edge_x, p, v).items():
                dbar[k] = np.linalg.norm(err)
            lam = min_eigenvalue(edge_M)
            cond = float(np.linalg.cond(edge_M).max())
            lyap = self.decentralized.edge_lyapunov(edge_x, edge_M, p, v)
        rec = TraceRecord(
            t=t,
            p=p,
            v=v,
            p_hat=p_hat,
            v_hat=v_hat,
            u=self.control(t, x),
            bearings=measured.as_array(g.m),
            dbar=dbar,
            dp=float(np.linalg.norm(p_hat - p)),
            dv=float(np.linalg.norm(v_hat - v)),
            pt=float(np.linalg.norm(p - ref.p)),
            vt=float(np.linalg.norm(v - ref.v)),
            lam_min=lam,
            cond=cond,
            lyap=lyap,
            min_dist=min_edge_length(p, g),
        )
        if log.isEnabledFor(logging.DEBUG):
            log.debug(
                f"t={t:.4f} dp={rec.dp:.3e} dv={rec.dv:.3e} lam_min={lam:.3e} min_dist={rec.min_dist:.3g}"
            )
        return rec

    def _checked(self, x, t: float):
        p, v, x_hat, M, edge_x, edge_M, dist_p, dist_v = x
        check_finite(
            t,
            position=p,
            velocity=v,
            centralized_estimate=x_hat,
            edge_estimates=edge_x,
            agent_estimates=dist_p,
            agent_velocity_estimates=dist_v,
        )
        if M is not None:
            check_conditioning(M, t)
        if edge_M is not None:
            for s, k in enumerate(self.decentralized.pe_edges):
                check_conditioning(edge_M[s], t, what=f"M_{self.g.label(k)}")

    def step(self):
        t, x = self.t, self.x
        draws = self.noise.draw()
        measured = self.measure(t, x[0], draws)
        rec = self.record(t, x, measured)
        self.records.append(rec)
        held = None
        if self.bus is not None:
            outgoing = self.decentralized.messages(
                t, x[6], x[7], rec.u, x[4], self.bus.rounds
            )
            held = self.bus.exchange(outgoing, t)
        n = self.substeps(x, measured)
        h = self.sc.dt / n
        for s in range(n):
            x = rk4_step(lambda tau, y: self.rates(tau, y, draws, held), t + s * h, x, h)
            x = self._symmetrized(x)
        self.index += 1
        self.t = self.index * self.sc.dt
        self._checked(x, self.t)
        self.x = x

    @staticmethod
    def _symmetrized(x):
        p, v, x_hat, M, edge_x, edge_M, dist_p, dist_v = x
        return (
            p,
            v,
            x_hat,
            None if M is None else symmetrize(M),
            edge_x,
            None if edge_M is None else symmetrize(edge_M),
            dist_p,
            dist_v,
        )

    def trace(self) -> pd.DataFrame:
        g = self.g
        columns = trace_columns(g.n, g.d, g.m)
        rows = np.array([rec.values() for rec in self.records]).reshape(-1, len(columns))
        return pd.DataFrame(rows, columns=columns)

    def run(self) -> RunResult:
        sc = self.sc
        log.info(f"Running {sc.name!r}: {sc.mode}, {sc.steps} steps of {sc.dt}s")
        abort = None
        try:
            for _ in range(sc.steps):
                self.step()
            draws = self.noise.draw()
            self.records.append(self.record(self.t, self.x, self.measure(self.t, self.x[0], draws)))
        except SimulationAbort as e:
            log.exception(f"Run {sc.name!r} aborted")
            abort = {"type": type(e).__name__, "message": str(e), "t": e.t}
        trace = self.trace()
        metrics = compute_metrics(sc, self.checks, trace, abort)
        log.info(f"Finished {sc.name!r} at t={self.t:.3f}s")
        return RunResult(scenario=sc, trace=trace, metrics=metrics, records=self.records)


def fit_decay_rate(
    t: np.ndarray, y: np.ndarray, skip_fraction: float = FIT_SKIP_FRACTION
) -> Optional[dict]:
    """Least squares line through log y after the first skip_fraction of the run."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 2:
        return None
    start = t[0] + skip_fraction * (t[-1] - t[0])
    keep = (t >= start) & np.isfinite(y) & (y > 0)
    if keep.sum() < 2:
        return None
    fit = linregress(t[keep], np.log(y[keep]))
    return {
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "r2": float(fit.rvalue**2),
    }


def bearing_columns(trace: pd.DataFrame, g: FormationGraph) -> np.ndarray:
    axes = axis_names(g.d)
    try:
        return np.stack(
            [trace[[f"g{k + 1}_{a}" for a in axes]].to_numpy() for k in range(g.m)],
            axis=1,
        )
    except KeyError as e:
        raise ConfigurationError(f"trace has no bearing columns for the formation: {e}") from None


def trace_pe_report(
    trace: pd.DataFrame,
    g: FormationGraph,
    window: float,
    threshold: float = PE_THRESHOLD,
    stride: int = 1,
) -> PEReport:
    t = trace["t"].to_numpy()
    if len(t) < 2:
        raise ConfigurationError("a bearing trace needs at least two samples")
    return bpe_report(bearing_columns(trace, g), t[1] - t[0], g, window, threshold, stride)


def compute_metrics(
    sc: Scenario, checks: ScenarioChecks, trace: pd.DataFrame, abort: Optional[dict]
) -> dict:
    g = checks.graph
    t = trace["t"].to_numpy()
    channels = ("dp", "dv", "pt", "vt") if sc.is_control else ("dp", "dv")
    last = trace.iloc[-1] if len(trace) else None
    metrics = {
        "scenario": sc.name,
        "mode": sc.mode,
        "estimator": sc.active_estimator,
        "seed": sc.seed,
        "dt": sc.dt,
        "duration": sc.duration,
        "steps": max(len(trace) - 1, 0),
        "final": {c: None if last is None else float(last[c]) for c in ("dp", "dv", "pt", "vt")},
        "rates": {c: fit_decay_rate(t, trace[c].to_numpy()) for c in channels},
        "edge_final": {
            g.label(k): None if last is None else float(last[f"dbar{k + 1}"])
            for k in checks.pe_edges
        },
        "min_dist": float(trace["min_dist"].min()) if len(trace) else None,
        "max_cond": float(trace["cond"].max()) if trace["cond"].notna().any() else None,
        "checks": checks.to_dict(),
        "pe_report": None,
        "bpe": None,
        "abort": abort,
    }
    metrics["collision"] = (
        metrics["min_dist"] is not None and metrics["min_dist"] <= COLLISION_TOL
    ) or (abort is not None and abort["type"] == "DegenerateBearingError")
    if metrics["collision"]:
        log.warning(f"Neighbors of {sc.name!r} came within {COLLISION_TOL} of each other")
    if len(trace) - 1 >= window_steps(sc.dt, sc.pe.window):
        report = trace_pe_report(trace, g, sc.pe.window, sc.pe.threshold)
        metrics["pe_report"] = report.to_dict(g)
        metrics["bpe"] = report.bpe
        unverified = set(checks.pe_edges) - report.pe_edges
        if unverified and checks.pe_source == "declared":
            log.warning(
                f"Declared PE edges {sorted(g.label(k) for k in unverified)} are not PE on the measured trace"
            )
        metrics["unverified_pe_edges"] = sorted(g.label(k) for k in unverified)
    else:
        log.warning(f"Run is shorter than the PE window {sc.pe.window}s, skipping the BPE check")
    return metrics


def run(sc: Scenario) -> RunResult:
    return Simulation(sc).run()


def write_outputs(result: RunResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "trace": out_dir / "trace.csv",
        "metrics": out_dir / "metrics.json",
        "scenario": out_dir / "scenario.yaml",
    }
    result.trace.to_csv(paths["trace"], index=False, float_format="%.17g", na_rep="nan")
    with open(paths["metrics"], "w") as f:
        json.dump(result.metrics, f, indent=2)
    dump_scenario(result.scenario, paths["scenario"])
    log.info(f"Wrote {', '.join(str(p) for p in paths.values())}")
    return paths


def analyze_trace(
    trace_path: Union[str, Path],
    window: float,
    threshold: float = PE_THRESHOLD,
    scenario_path: Optional[Union[str, Path]] = None,
) -> Tuple[PEReport, FormationGraph]:
    """BPE check of a written trace; the formation comes from the scenario.yaml written next to it."""
    trace_path = Path(trace_path)
    scenario_path = Path(scenario_path or trace_path.with_name("scenario.yaml"))
    if not scenario_path.exists():
        raise ConfigurationError(f"no scenario file {scenario_path} to read the formation from")
    sc = load_scenario(scenario_path)
    g = build_graph(sc.n, sc.edges, sc.d)
    trace = pd.read_csv(trace_path, float_precision="round_trip")
    return trace_pe_report(trace, g, window, threshold), g


@dataclass
class SweepLimit:
    limit: Optional[int] = None

    def __post_init__(self):
        self.semaphore = None
        if self.limit:
            self.semaphore = asyncio.Semaphore(self.limit)

    async def __aenter__(self):
        if self.semaphore:
            await self.semaphore.__aenter__()

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        if self.semaphore:
            await self.semaphore.__aexit__(exc_type, exc_val, exc_tb)


async def run_many(
    scenarios: Sequence[Scenario], max_parallel: Optional[int] = None
) -> List[RunResult]:
    """Run independent scenarios in worker threads; results come back in input order."""
    loop = asyncio.get_running_loop()
    limit = SweepLimit(max_parallel)

    async def one(sc: Scenario) -> RunResult:
        async with limit:
            return await loop.run_in_executor(None, run, sc)

    return list(await asyncio.gather(*(one(sc) for sc in scenarios)))
