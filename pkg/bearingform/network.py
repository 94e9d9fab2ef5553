"""
Simulated synchronous communication between neighboring agents.
One round per integration step. Each agent broadcasts one message per round to all its neighbors, and a link
delivers its messages first in first out after `delay` rounds.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Mapping, Optional, Sequence

import numpy as np

from bearingform.exceptions import ConfigurationError
from bearingform.graph import FormationGraph

log = logging.getLogger(__file__)


@dataclass(frozen=True, eq=False)
class EstimateMessage:
    sender: int
    t: float
    p_hat: np.ndarray
    v_hat: np.ndarray
    u: np.ndarray
    edge_estimates: Mapping[int, np.ndarray] = field(default_factory=dict)
    round: int = 0


@dataclass(frozen=True)
class Round:
    t: float
    index: int
    mailbox: Mapping[int, List[EstimateMessage]]

    def inbox(self, i: int) -> List[EstimateMessage]:
        return self.mailbox.get(i, [])


def _check_outgoing(outgoing: Sequence[EstimateMessage], g: FormationGraph):
    senders = sorted(msg.sender for msg in outgoing)
    if senders != list(range(g.n)):
        raise ConfigurationError(
            f"expected exactly one outgoing message per agent, got senders {[s + 1 for s in senders]}"
        )


def deliver(
    outgoing: Sequence[EstimateMessage], g: FormationGraph
) -> Dict[int, List[EstimateMessage]]:
    """Zero-delay delivery: every message reaches every neighbor of its sender."""
    by_sender = {msg.sender: msg for msg in outgoing}
    return {i: [by_sender[j] for j in g.neighbors(i)] for i in range(g.n)}


class MessageBus:
    def __init__(self, g: FormationGraph, delay: int = 0):
        if delay < 0:
            raise ConfigurationError(f"link delay must be >= 0 rounds, got {delay}")
        self.g = g
        self.delay = delay
        self.rounds = 0
        self._history: Deque[Sequence[EstimateMessage]] = deque(maxlen=delay + 1)

    def exchange(self, outgoing: Sequence[EstimateMessage], t: float = 0.0) -> Round:
        """Queue this round's messages and deliver the ones sent `delay` rounds ago."""
        _check_outgoing(outgoing, self.g)
        self._history.append(tuple(outgoing))
        index = self.rounds
        self.rounds += 1
        return Round(t=t, index=index, mailbox=deliver(self._history[0], self.g))


def exchange(
    outgoing: Sequence[EstimateMessage],
    g: FormationGraph,
    delay: int = 0,
    bus: Optional[MessageBus] = None,
    t: float = 0.0,
) -> Round:
    if bus is None:
        if delay:
            raise ConfigurationError("a delayed exchange needs a MessageBus to hold the history")
        _check_outgoing(outgoing, g)
        return Round(t=t, index=0, mailbox=deliver(outgoing, g))
    return bus.exchange(outgoing, t)
