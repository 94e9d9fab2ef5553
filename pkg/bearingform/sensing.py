"""
Measurements available to the agents.
Bearings are corrupted by a small multiplicative rotation, g_m = (I + (a w)x) g / |(I + (a w)x) g| in 3D and a
rotation by the angle a w in 2D. Every edge owns its own random stream seeded from (seed, edge index), and a
single draw per undirected edge keeps g_ji = -g_ij.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from bearingform.analysis import BearingSnapshot
from bearingform.dynamics import AgentState
from bearingform.exceptions import ConfigurationError

log = logging.getLogger(__file__)

NOISE_KINDS = ("none", "multiplicative-skew")


@dataclass
class NoiseModel:
    kind: str = "none"
    magnitude: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(
                f"unknown noise kind {self.kind!r}, choose from {NOISE_KINDS}"
            )
        if self.magnitude < 0:
            raise ConfigurationError(f"noise magnitude must be >= 0, got {self.magnitude}")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.magnitude > 0


def skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def perturb(g: np.ndarray, w, magnitude: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.size == 3:
        rotated = (np.eye(3) + skew(magnitude * np.asarray(w))) @ g
    elif g.size == 2:
        angle = magnitude * float(w)
        c, s = np.cos(angle), np.sin(angle)
        rotated = np.array([c * g[0] - s * g[1], s * g[0] + c * g[1]])
    else:
        raise ConfigurationError(f"bearing noise is defined for d=2 or d=3, got d={g.size}")
    return rotated / np.linalg.norm(rotated)


class NoiseSource:
    """Owns one random stream per edge and hands out one draw per edge per step."""

    def __init__(self, model: NoiseModel, m: int, d: int):
        if model.active and d not in (2, 3):
            raise ConfigurationError(
                f"multiplicative-skew noise needs d=3 (or the planar rotation with d=2), got d={d}"
            )
        self.model = model
        self.m = m
        self.d = d
        self.streams = [np.random.default_rng([model.seed, k]) for k in range(m)]

    def draw(self) -> Optional[np.ndarray]:
        if not self.model.active:
            return None
        if self.d == 3:
            return np.array([rng.standard_normal(3) for rng in self.streams])
        return np.array([rng.standard_normal() for rng in self.streams])


def apply_noise(
    snapshot: BearingSnapshot, model: NoiseModel, draws: Optional[np.ndarray]
) -> BearingSnapshot:
    if draws is None or not model.active:
        return snapshot
    noisy = {
        k: perturb(g, draws[k], model.magnitude) for k, g in snapshot.bearings.items()
    }
    return BearingSnapshot(t=snapshot.t, bearings=noisy)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    t: float
    bearings: BearingSnapshot
    leader_positions: Mapping[int, np.ndarray]
    leader_velocities: Mapping[int, np.ndarray]
    inputs: Optional[np.ndarray] = None

    def bearing(self, k: int, sign: int = 1) -> np.ndarray:
        """Measured bearing of edge k, negated when read from the terminal node."""
        return sign * self.bearings[k]

    def leader_vector(self, n: int, d: int) -> np.ndarray:
        """Stacked nd-vector holding the measured leader positions, zeros elsewhere."""
        out = np.zeros(n * d)
        for i, p in self.leader_positions.items():
            out[i * d : (i + 1) * d] = p
        return out


def measure(
    snapshot: BearingSnapshot,
    leader_states: Mapping[int, AgentState],
    noise: NoiseSource,
    inputs: Optional[np.ndarray] = None,
    draws: Optional[np.ndarray] = None,
) -> MeasurementSet:
    if draws is None:
        draws = noise.draw()
    return MeasurementSet(
        t=snapshot.t,
        bearings=apply_noise(snapshot, noise.model, draws),
        leader_positions={i: s.p.copy() for i, s in leader_states.items()},
        leader_velocities={i: s.v.copy() for i, s in leader_states.items()},
        inputs=None if inputs is None else np.array(inputs, dtype=float),
    )
