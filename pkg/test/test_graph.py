import pytest
import numpy as np

import bearingform.exceptions
import bearingform.graph


@pytest.fixture
def cycle():
    return bearingform.graph.build_graph(4, [(1, 2), (2, 3), (3, 4), (1, 4)], 3)


def random_connected_graph(rng, n, d=2):
    order = rng.permutation(n) + 1
    edges = {frozenset((int(order[i]), int(order[rng.integers(i)]))) for i in range(1, n)}
    for _ in range(n):
        i, j = rng.choice(n, 2, replace=False) + 1
        edges.add(frozenset((int(i), int(j))))
    return bearingform.graph.build_graph(n, [tuple(sorted(e)) for e in edges], d)


def test_cycle_incidence_matches_printed_matrix(cycle):
    H = bearingform.graph.incidence(cycle).H
    expected = np.array(
        [
            [1, -1, 0, 0],
            [0, 1, -1, 0],
            [0, 0, 1, -1],
            [1, 0, 0, -1],
        ]
    )
    np.testing.assert_array_equal(H, expected)


def test_single_edge():
    g = bearingform.graph.build_graph(2, [(1, 2)], 2)
    inc = bearingform.graph.incidence(g)
    assert g.m == 1
    np.testing.assert_array_equal(inc.H, [[1, -1]])
    np.testing.assert_array_equal(inc.H_bar, np.kron([[1, -1]], np.eye(2)))
    L = bearingform.graph.laplacian(g)
    np.testing.assert_array_equal(L, np.block([[np.eye(2), -np.eye(2)], [-np.eye(2), np.eye(2)]]))


@pytest.mark.parametrize(
    "n,edges,d,fragment",
    [
        (3, [(1, 2), (1, 2)], 2, "duplicate"),
        (3, [(1, 2), (2, 1)], 2, "duplicate"),
        (3, [(2, 2)], 2, "self-loop"),
        (3, [(1, 4)], 2, "outside"),
        (1, [], 2, "at least 2"),
        (3, [(1, 2)], 1, "dimension"),
    ],
)
def test_build_graph_rejects(n, edges, d, fragment):
    with pytest.raises(bearingform.exceptions.GraphValidationError, match=fragment):
        bearingform.graph.build_graph(n, edges, d)


def test_error_names_offending_edge():
    with pytest.raises(bearingform.exceptions.GraphValidationError, match=r"\(2,1\)"):
        bearingform.graph.build_graph(3, [(1, 2), (2, 1)], 2)


def test_validation_error_is_value_error():
    with pytest.raises(ValueError):
        bearingform.graph.build_graph(3, [(1, 1)], 2)


def test_neighbors_symmetric(cycle):
    for i in range(cycle.n):
        for j in cycle.neighbors(i):
            assert i in cycle.neighbors(j)
    assert cycle.neighbors(0) == (1, 3)


def test_edge_lookup(cycle):
    assert cycle.edge_index(3, 0) == 3
    assert cycle.find_edge((4, 1)) == 3
    assert cycle.orientation(0, 3) == 1
    assert cycle.orientation(3, 3) == -1
    assert cycle.owned_edges(0) == (0, 3)
    assert cycle.label(3) == "(1,4)"
    with pytest.raises(bearingform.exceptions.GraphValidationError):
        cycle.edge_index(0, 2)


def test_incidence_rows_sum_to_zero(cycle):
    H = bearingform.graph.incidence(cycle).H
    np.testing.assert_array_equal(H @ np.ones(cycle.n), 0)
    assert ((H == 1).sum(axis=1) == 1).all()
    assert ((H == -1).sum(axis=1) == 1).all()


def test_cycle_laplacian_rank(cycle):
    L = bearingform.graph.laplacian(cycle)
    assert np.linalg.matrix_rank(L) == 9
    np.testing.assert_allclose(L @ bearingform.graph.translation_basis(4, 3), 0)


@pytest.mark.parametrize("seed", range(5))
def test_laplacian_matches_neighbor_sum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    g = random_connected_graph(rng, n)
    direct = np.zeros((n, n))
    for i in range(n):
        for j in g.neighbors(i):
            direct[i, i] += 1
            direct[i, j] -= 1
    np.testing.assert_array_equal(
        bearingform.graph.laplacian(g), np.kron(direct, np.eye(g.d))
    )
    assert np.linalg.matrix_rank(bearingform.graph.laplacian(g)) == g.d * (n - 1)
    assert np.linalg.matrix_rank(bearingform.graph.incidence(g).H) == n - 1
    assert np.allclose(bearingform.graph.laplacian(g), bearingform.graph.laplacian(g).T)


@pytest.mark.parametrize(
    "n,edges,connected",
    [
        (4, [(1, 2), (2, 3), (3, 4), (1, 4)], True),
        (4, [(1, 2), (3, 4)], False),
        (5, [(1, 2), (1, 3), (1, 4), (1, 5)], True),
    ],
)
def test_is_connected(n, edges, connected):
    g = bearingform.graph.build_graph(n, edges, 2)
    assert bearingform.graph.is_connected(g) is connected


def test_edge_index_stable_across_builds():
    edges = [(3, 1), (1, 2), (2, 3)]
    a = bearingform.graph.build_graph(3, edges, 2)
    b = bearingform.graph.build_graph(3, edges, 2)
    assert a.edges == b.edges == ((2, 0), (0, 1), (1, 2))


def test_as_networkx(cycle):
    G = cycle.as_networkx()
    assert G.number_of_nodes() == 4
    assert G.number_of_edges() == 4
