"""
Scenario description, its YAML codec and the built-in experiments.
File layout:

    name: paper-decentralized
    formation: {d: 3, n: 4, edges: [[1, 2], [2, 3], [3, 4], [1, 4]], leaders: [1]}
    run: {mode: decentralized-observer, duration: 30, dt: 0.001, seed: 0, delay: 0}
    noise: {kind: multiplicative-skew, magnitude: 0.02}
    pe: {edges: [[1, 2], [1, 4]], window: 1.0, threshold: 0.001}
    gains:
      edge: {kappa: 10, Q: 10, S: 0.01, M0: 100}
      distributed: {kappa_o1: 10, kappa_o2: 5}
    initial: {p_hat: [[0, 1, 0], ...], v_hat: [[0, 0, 0], ...]}
    reference: {name: diagonal-sweep}

Vertices are 1-based. Gain matrices are a scalar (scalar * I), {identity: s} or {rows: [[...], ...]}.
"""
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from bearingform.centralized import CentralizedGains
from bearingform.controller import ControllerGains
from bearingform.decentralized import DistributedGains, EdgeGains
from bearingform.dynamics import ReferenceTrajectory, make_reference
from bearingform.exceptions import ConfigurationError, ScenarioError
from bearingform.graph import FormationGraph, build_graph
from bearingform.riccati import as_matrix
from bearingform.sensing import NoiseModel

log = logging.getLogger(__file__)

MODES = (
    "centralized-observer",
    "decentralized-observer",
    "observer-based-control",
    "truth-feedback-control",
)
ESTIMATORS = ("decentralized", "centralized", "truth")
CONTROL_MODES = ("observer-based-control", "truth-feedback-control")

Pair = Tuple[int, int]


@dataclass
class PESettings:
    edges: Optional[List[Pair]] = None
    window: float = 1.0
    threshold: float = 1e-3
    ibr_edge_count: Optional[int] = None


@dataclass
class Scenario:
    name: str = "scenario"
    d: int = 3
    n: int = 4
    edges: List[Pair] = field(default_factory=lambda: [(1, 2), (2, 3), (3, 4), (1, 4)])
    leaders: List[int] = field(default_factory=lambda: [1])
    mode: str = "decentralized-observer"
    estimator: str = "decentralized"
    duration: float = 30.0
    dt: float = 1e-3
    delay: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    pe: PESettings = field(default_factory=PESettings)
    centralized: CentralizedGains = field(default_factory=CentralizedGains)
    edge: EdgeGains = field(default_factory=EdgeGains)
    distributed: DistributedGains = field(default_factory=DistributedGains)
    controller: ControllerGains = field(default_factory=ControllerGains)
    p0: Optional[np.ndarray] = None
    v0: Optional[np.ndarray] = None
    p_hat0: Optional[np.ndarray] = None
    v_hat0: Optional[np.ndarray] = None
    reference: str = "diagonal-sweep"
    reference_params: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.noise.seed

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def leader_indices(self) -> Tuple[int, ...]:
        return tuple(i - 1 for i in self.leaders)

    @property
    def is_control(self) -> bool:
        return self.mode in CONTROL_MODES

    @property
    def active_estimator(self) -> str:
        if self.mode == "centralized-observer":
            return "centralized"
        if self.mode == "decentralized-observer":
            return "decentralized"
        if self.mode == "truth-feedback-control":
            return "truth"
        return self.estimator

    def graph(self) -> FormationGraph:
        return build_graph(self.n, self.edges, self.d)

    def build_reference(self) -> ReferenceTrajectory:
        params = dict(self.reference_params)
        if self.reference == "diagonal-sweep":
            params.setdefault("d", self.d)
            params.setdefault("n", self.n)
        ref = make_reference(self.reference, **params)
        if (ref.n, ref.d) != (self.n, self.d):
            raise ConfigurationError(
                f"reference {self.reference!r} describes n={ref.n}, d={ref.d}, scenario has n={self.n}, d={self.d}"
            )
        return ref

    def initial_conditions(
        self, ref: Optional[ReferenceTrajectory] = None
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """True and estimated initial states; missing true states start on the reference, missing estimates on the truth."""
        ref = ref or self.build_reference()
        start = ref(0.0)
        p = start.p.copy() if self.p0 is None else np.array(self.p0, dtype=float)
        v = start.v.copy() if self.v0 is None else np.array(self.v0, dtype=float)
        p_hat = p.copy() if self.p_hat0 is None else np.array(self.p_hat0, dtype=float)
        v_hat = v.copy() if self.v_hat0 is None else np.array(self.v_hat0, dtype=float)
        return p, v, p_hat, v_hat

    def validate(self) -> FormationGraph:
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.duration < self.dt:
            raise ConfigurationError(f"duration {self.duration} is shorter than dt {self.dt}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}, choose from {MODES}")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(
                f"unknown estimator {self.estimator!r}, choose from {ESTIMATORS}"
            )
        if self.delay < 0:
            raise ConfigurationError(f"delay must be >= 0 rounds, got {self.delay}")
        if self.pe.window <= 0 or self.pe.threshold < 0:
            raise ConfigurationError("PE window must be positive and threshold non-negative")
        g = self.graph()
        nd = self.n * self.d
        for value, dim, name in (
            (self.centralized.Q, nd, "centralized Q"),
            (self.centralized.S, 2 * nd, "centralized S"),
            (self.centralized.M0, 2 * nd, "centralized M0"),
            (self.edge.Q, self.d, "edge Q"),
            (self.edge.S, 2 * self.d, "edge S"),
            (self.edge.M0, 2 * self.d, "edge M0"),
        ):
            as_matrix(value, dim, name)
        if not self.leaders or any(not 1 <= i <= self.n for i in self.leaders):
            raise ConfigurationError(f"leaders {self.leaders} must be agents within 1..{self.n}")
        if self.noise.active and self.d not in (2, 3):
            raise ConfigurationError(
                f"multiplicative-skew noise needs d=3 (planar rotation for d=2), got d={self.d}"
            )
        for name in ("p0", "v0", "p_hat0", "v_hat0"):
            value = getattr(self, name)
            if value is not None and np.shape(value) != (self.n, self.d):
                raise ConfigurationError(
                    f"initial {name} must have shape ({self.n}, {self.d}), got {np.shape(value)}"
                )
        self.build_reference()
        return g

    def with_overrides(
        self,
        seed: Optional[int] = None,
        dt: Optional[float] = None,
        duration: Optional[float] = None,
    ) -> "Scenario":
        sc = self
        if seed is not None:
            sc = replace(sc, noise=replace(sc.noise, seed=seed))
        if dt is not None:
            sc = replace(sc, dt=dt)
        if duration is not None:
            sc = replace(sc, duration=duration)
        return sc


def _decode_identity(value) -> float:
    return float(value)


def _decode_rows(value) -> np.ndarray:
    return np.array(value, dtype=float)


matrix_decoders = {
    "identity": _decode_identity,
    "rows": _decode_rows,
}


def decode_matrix(value) -> Union[float, np.ndarray]:
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict) and len(value) == 1:
        (kind, payload), = value.items()
        try:
            return matrix_decoders[kind](payload)
        except KeyError:
            pass
    raise ConfigurationError(
        f"cannot read matrix {value!r}, use a scalar, {{identity: s}} or {{rows: [[...]]}}"
    )


def encode_matrix(value) -> Any:
    if np.isscalar(value):
        return float(value)
    return {"rows": np.asarray(value).tolist()}


_MATRIX_FIELDS = ("Q", "S", "M0")


def _gains(cls, section: Optional[dict]):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} entries {sorted(unknown)}")
    for key in _MATRIX_FIELDS:
        if key in section:
            section[key] = decode_matrix(section[key])
    return cls(**section)


def _pairs(value) -> Optional[List[Pair]]:
    if value is None:
        return None
    return [tuple(int(x) for x in pair) for pair in value]


def _array(value) -> Optional[np.ndarray]:
    return None if value is None else np.array(value, dtype=float)


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigurationError("a scenario file must hold a mapping")
    formation = data.get("formation", {})
    run = data.get("run", {})
    noise = data.get("noise", {})
    pe = data.get("pe", {})
    gains = data.get("gains", {})
    initial = data.get("initial", {})
    reference = data.get("reference", {})
    try:
        return Scenario(
            name=str(data.get("name", "scenario")),
            d=int(formation["d"]),
            n=int(formation["n"]),
            edges=_pairs(formation["edges"]),
            leaders=[int(i) for i in formation.get("leaders", [1])],
            mode=run.get("mode", "decentralized-observer"),
            estimator=run.get("estimator", "decentralized"),
            duration=float(run.get("duration", 30.0)),
            dt=float(run.get("dt", 1e-3)),
            delay=int(run.get("delay", 0)),
            noise=NoiseModel(
                kind=noise.get("kind", "none"),
                magnitude=float(noise.get("magnitude", 0.02)),
                seed=int(run.get("seed", noise.get("seed", 0))),
            ),
            pe=PESettings(
                edges=_pairs(pe.get("edges")),
                window=float(pe.get("window", 1.0)),
                threshold=float(pe.get("threshold", 1e-3)),
                ibr_edge_count=pe.get("ibr_edge_count"),
            ),
            centralized=_gains(CentralizedGains, gains.get("centralized")),
            edge=_gains(EdgeGains, gains.get("edge")),
            distributed=_gains(DistributedGains, gains.get("distributed")),
            controller=_gains(ControllerGains, gains.get("controller")),
            p0=_array(initial.get("p")),
            v0=_array(initial.get("v")),
            p_hat0=_array(initial.get("p_hat")),
            v_hat0=_array(initial.get("v_hat")),
            reference=reference.get("name", "diagonal-sweep"),
            reference_params=dict(reference.get("params", {})),
        )
    except KeyError as e:
        raise ConfigurationError(f"scenario is missing the formation entry {e}") from None
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ConfigurationError(f"malformed scenario: {e}") from e


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _gains_dict(gains) -> dict:
    out = {}
    for f in fields(gains):
        value = getattr(gains, f.name)
        out[f.name] = encode_matrix(value) if f.name in _MATRIX_FIELDS else _plain(value)
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "formation": {
            "d": sc.d,
            "n": sc.n,
            "edges": [list(e) for e in sc.edges],
            "leaders": list(sc.leaders),
        },
        "run": {
            "mode": sc.mode,
            "estimator": sc.estimator,
            "duration": sc.duration,
            "dt": sc.dt,
            "seed": sc.seed,
            "delay": sc.delay,
        },
        "noise": {"kind": sc.noise.kind, "magnitude": sc.noise.magnitude},
        "pe": {
            "edges": None if sc.pe.edges is None else [list(e) for e in sc.pe.edges],
            "window": sc.pe.window,
            "threshold": sc.pe.threshold,
            "ibr_edge_count": sc.pe.ibr_edge_count,
        },
        "gains": {
            "centralized": _gains_dict(sc.centralized),
            "edge": _gains_dict(sc.edge),
            "distributed": _gains_dict(sc.distributed),
            "controller": _gains_dict(sc.controller),
        },
        "initial": {
            key: _plain(value)
            for key, value in (
                ("p", sc.p0),
                ("v", sc.v0),
                ("p_hat", sc.p_hat0),
                ("v_hat", sc.v_hat0),
            )
            if value is not None
        },
        "reference": {"name": sc.reference, "params": _plain(sc.reference_params)},
    }


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse {path}: {e}") from e
    except OSError as e:
        raise ConfigurationError(f"cannot read scenario {path}: {e.strerror}") from e
    sc = scenario_from_dict(data)
    log.info(f"Loaded scenario {sc.name!r} from {path}")
    return sc


def dump_scenario(sc: Scenario, path: Union[str, Path]):
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(sc), f, sort_keys=False)


BUILTIN_EDGES = [(1, 2), (2, 3), (3, 4), (1, 4)]
BUILTIN_PE_EDGES = [(1, 2), (1, 4)]
BUILTIN_P_HAT0 = [[0, 1, 0], [2, 0, 1], [0, -1, 1], [0, 0, 0]]
BUILTIN_V_HAT0 = [[0, 0, 0], [1, 0, 0], [1, -1, 0], [0, 1, 0]]
BUILTIN_CONTROL_P0 = [[1, 0, 0], [-1, 1, 1], [0, 1, 0], [0, 0, 0]]
BUILTIN_CONTROL_V0 = [[0, 0, 1], [1, -1, -1], [1, 0, 1], [0, 0, 0]]


def _builtin(name: str, mode: str, **kwargs) -> Scenario:
    return Scenario(
        name=name,
        d=3,
        n=4,
        edges=list(BUILTIN_EDGES),
        leaders=[1],
        mode=mode,
        duration=30.0,
        dt=1e-3,
        noise=NoiseModel(kind="multiplicative-skew", magnitude=0.02, seed=0),
        # one period of the reference oscillation
        pe=PESettings(edges=list(BUILTIN_PE_EDGES), window=1.0),
        centralized=CentralizedGains(kappa=10.0, Q=10.0, S=0.01, M0=1.0),
        edge=EdgeGains(kappa=10.0, Q=10.0, S=0.01, M0=100.0),
        distributed=DistributedGains(kappa_o1=10.0, kappa_o2=5.0),
        controller=ControllerGains(kappa_p=5.0, kappa_v=2.0),
        p_hat0=np.array(BUILTIN_P_HAT0, dtype=float),
        v_hat0=np.array(BUILTIN_V_HAT0, dtype=float),
        reference="diagonal-sweep",
        **kwargs,
    )


def builtin_scenarios() -> Dict[str, Scenario]:
    return {
        "paper-centralized": _builtin("paper-centralized", "centralized-observer"),
        "paper-decentralized": _builtin("paper-decentralized", "decentralized-observer"),
        "paper-control": _builtin(
            "paper-control",
            "observer-based-control",
            p0=np.array(BUILTIN_CONTROL_P0, dtype=float),
            v0=np.array(BUILTIN_CONTROL_V0, dtype=float),
        ),
    }


def builtin(name: str) -> Scenario:
    scenarios = builtin_scenarios()
    try:
        return scenarios[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown built-in scenario {name!r}, choose from {sorted(scenarios)}"
        ) from None
