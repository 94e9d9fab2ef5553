"""
Interaction topology of the formation.
Vertices are 1-based in scenario files and 0-based everywhere inside the package. Edge orientation is kept
exactly as written so that row k of the incidence matrix has +1 at the initial node and -1 at the terminal node.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from bearingform.exceptions import GraphValidationError

log = logging.getLogger(__file__)

Edge = Tuple[int, int]


@dataclass(frozen=True)
class IncidenceMatrix:
    H: np.ndarray
    H_bar: np.ndarray


@dataclass(frozen=True)
class FormationGraph:
    n: int
    edges: Tuple[Edge, ...]
    d: int
    _neighbors: Dict[int, Tuple[int, ...]] = field(
        init=False, repr=False, compare=False
    )
    _edge_lookup: Dict[FrozenSet[int], int] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        nbrs: Dict[int, List[int]] = {i: [] for i in range(self.n)}
        lookup = {}
        for k, (i, j) in enumerate(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
            lookup[frozenset((i, j))] = k
        object.__setattr__(
            self, "_neighbors", {i: tuple(sorted(v)) for i, v in nbrs.items()}
        )
        object.__setattr__(self, "_edge_lookup", lookup)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def tails(self) -> np.ndarray:
        return np.array([i for i, _ in self.edges], dtype=int)

    @property
    def heads(self) -> np.ndarray:
        return np.array([j for _, j in self.edges], dtype=int)

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self._neighbors[i]

    def edge_index(self, i: int, j: int) -> int:
        try:
            return self._edge_lookup[frozenset((i, j))]
        except KeyError:
            raise GraphValidationError(
                f"no edge between {i + 1} and {j + 1}"
            ) from None

    def orientation(self, i: int, k: int) -> int:
        """+1 when i is the initial node of edge k, -1 when it is the terminal node."""
        tail, head = self.edges[k]
        if i == tail:
            return 1
        if i == head:
            return -1
        raise GraphValidationError(f"agent {i + 1} is not an endpoint of edge {k}")

    def owned_edges(self, i: int) -> Tuple[int, ...]:
        return tuple(k for k, (tail, _) in enumerate(self.edges) if tail == i)

    def label(self, k: int) -> str:
        i, j = self.edges[k]
        return f"({i + 1},{j + 1})"

    def find_edge(self, pair: Sequence[int]) -> int:
        """Index of the edge named by a 1-based vertex pair, orientation ignored."""
        i, j = pair
        return self.edge_index(i - 1, j - 1)

    def as_networkx(self) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(self.n))
        G.add_edges_from(self.edges)
        return G


def build_graph(n: int, edge_list: Iterable[Sequence[int]], d: int) -> FormationGraph:
    if n < 2:
        raise GraphValidationError(f"a formation needs at least 2 agents, got n={n}")
    if d < 2:
        raise GraphValidationError(f"ambient dimension must be at least 2, got d={d}")
    edges = []
    seen = set()
    for pair in edge_list:
        i, j = (int(x) for x in pair)
        name = f"({i},{j})"
        if not (1 <= i <= n and 1 <= j <= n):
            raise GraphValidationError(f"edge {name} references a vertex outside 1..{n}")
        if i == j:
            raise GraphValidationError(f"edge {name} is a self-loop")
        key = frozenset((i, j))
        if key in seen:
            raise GraphValidationError(f"edge {name} is a duplicate")
        seen.add(key)
        edges.append((i - 1, j - 1))
    g = FormationGraph(n=n, edges=tuple(edges), d=d)
    log.debug(f"Built graph n={n} m={g.m} d={d}")
    return g


def incidence(g: FormationGraph) -> IncidenceMatrix:
    H = np.zeros((g.m, g.n))
    for k, (i, j) in enumerate(g.edges):
        H[k, i] = 1.0
        H[k, j] = -1.0
    return IncidenceMatrix(H=H, H_bar=np.kron(H, np.eye(g.d)))


def laplacian(g: FormationGraph) -> np.ndarray:
    H_bar = incidence(g).H_bar
    return H_bar.T @ H_bar


def translation_basis(n: int, d: int) -> np.ndarray:
    """U = 1_n (x) I_d, spanning the common translations."""
    return np.kron(np.ones((n, 1)), np.eye(d))


def is_connected(g: FormationGraph) -> bool:
    components = UnionFind(range(g.n))
    for i, j in g.edges:
        components.union(i, j)
    return len(list(components.to_sets())) == 1
