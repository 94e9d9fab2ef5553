import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from bearingform.dynamics import ReferenceSample
from bearingform.exceptions import ConfigurationError

log = logging.getLogger(__file__)

Gain = Union[float, np.ndarray]


@dataclass
class ControllerGains:
    kappa_p: Gain = 5.0
    kappa_v: Gain = 2.0

    def __post_init__(self):
        if np.any(np.asarray(self.kappa_p) <= 0) or np.any(np.asarray(self.kappa_v) <= 0):
            raise ConfigurationError("controller gains must be strictly positive")

    def for_agent(self, i: int):
        kp = np.asarray(self.kappa_p, dtype=float)
        kv = np.asarray(self.kappa_v, dtype=float)
        return float(kp if kp.ndim == 0 else kp[i]), float(kv if kv.ndim == 0 else kv[i])


def control(
    i: int,
    p_hat_i: np.ndarray,
    v_hat_i: np.ndarray,
    ref: ReferenceSample,
    gains: ControllerGains,
) -> np.ndarray:
    kp, kv = gains.for_agent(i)
    return -kp * (p_hat_i - ref.p[i]) - kv * (v_hat_i - ref.v[i]) + ref.u[i]


def control_all(
    p_hat: np.ndarray, v_hat: np.ndarray, ref: ReferenceSample, gains: ControllerGains
) -> np.ndarray:
    return np.array(
        [control(i, p_hat[i], v_hat[i], ref, gains) for i in range(len(p_hat))]
    )


def closed_loop_poles(kappa_p: float, kappa_v: float) -> np.ndarray:
    """Per-axis poles with perfect state feedback, roots of s^2 + kappa_v s + kappa_p."""
    companion = np.array([[0.0, 1.0], [-kappa_p, -kappa_v]])
    return np.linalg.eigvals(companion)
