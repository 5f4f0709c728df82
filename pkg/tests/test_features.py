import itertools

import networkx as nx
import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from graphctmc.features import (
    GLOBAL_AUX_DIM,
    NODE_AUX_DIM,
    component_info,
    compute_aux,
    cycle_counts,
    laplacian_spectrum,
)
from graphctmc.graph import CategoricalGraph, permute_graph

from conftest import graphs, random_graph


def brute_cycles(A, length):
    """Enumerate simple cycles of a given length as vertex sets with edge orderings."""
    n = A.shape[0]
    per_node = np.zeros(n)
    total = 0
    for nodes in itertools.combinations(range(n), length):
        first, rest = nodes[0], nodes[1:]
        for order in itertools.permutations(rest):
            if order[0] > order[-1]:
                continue  # each cycle once per direction pair
            cyc = (first,) + order
            if all(A[cyc[k], cyc[(k + 1) % length]] for k in range(length)):
                total += 1
                per_node[list(nodes)] += 1
    return per_node, total


def test_cycle_counts_match_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        A = random_graph(rng, n, density=rng.uniform(0.2, 0.9)).adjacency
        per_node, totals = cycle_counts(A)
        for col, length in enumerate((3, 4, 5)):
            expect_node, expect_total = brute_cycles(A, length)
            assert np.array_equal(per_node[:, col], expect_node)
            assert totals[col] == expect_total
        assert totals[3] == brute_cycles(A, 6)[1]


def test_small_known_graphs():
    k3 = CategoricalGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    aux = compute_aux(k3, 0.0)
    assert np.array_equal(aux.node_cycles[:, 0], [1, 1, 1]) and aux.cycle_totals[0] == 1
    k4 = CategoricalGraph.from_edges(4, list(itertools.combinations(range(4), 2)))
    aux = compute_aux(k4, 0.0)
    assert np.array_equal(aux.node_cycles[:, 1], [3, 3, 3, 3]) and aux.cycle_totals[1] == 3


def test_empty_graph():
    aux = compute_aux(CategoricalGraph.from_edges(5, []), 0.25, 1.0)
    assert not aux.node_cycles.any() and not aux.cycle_totals.any()
    assert aux.num_components == 5
    assert not aux.eigenvalues.any()
    assert aux.global_aux[-1] == 0.25
    assert aux.node_aux.shape == (5, NODE_AUX_DIM) and aux.global_aux.shape == (GLOBAL_AUX_DIM,)


def test_eigenvalues_match_characteristic_polynomial():
    # exact roots (with multiplicity) of the integer characteristic polynomial
    rng = np.random.default_rng(1)
    for _ in range(50):
        A = random_graph(rng, 4, density=0.6).adjacency
        L = sympy.Matrix((np.diag(A.sum(1)) - A).astype(int))
        lam = sympy.symbols("lam")
        roots = sympy.roots(L.charpoly(lam).as_expr(), lam)
        exact = sorted(float(r) for r, mult in roots.items() for _ in range(mult))
        assert np.allclose(laplacian_spectrum(A), exact, atol=1e-8, rtol=0)


def test_eigen_features_skip_one_zero_per_component():
    # two disjoint edges plus an isolated node: spectrum {0, 0, 0, 2, 2}
    g = CategoricalGraph.from_edges(5, [(0, 1), (2, 3)])
    aux = compute_aux(g, 0.0)
    assert aux.num_components == 3
    assert np.allclose(aux.eigenvalues, [2, 2, 0, 0, 0])


def test_components_agree_with_networkx():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = random_graph(rng, 12, density=0.12)
        k, flag = component_info(g.adjacency)
        comps = list(nx.connected_components(nx.from_numpy_array(g.adjacency)))
        assert k == len(comps)
        biggest = max(len(c) for c in comps)
        expect = np.zeros(12)
        for c in comps:
            if len(c) == biggest:
                expect[list(c)] = 1
        assert np.array_equal(flag, expect)


def test_edge_type_relabeling_does_not_matter():
    g = CategoricalGraph.from_edges(4, [(0, 1, 1), (1, 2, 2), (2, 0, 1), (2, 3, 2)])
    h = CategoricalGraph(g.node_types, np.where(g.edge_types > 0, 3 - g.edge_types, 0))
    a, b = compute_aux(g, 0.5), compute_aux(h, 0.5)
    assert np.array_equal(a.node_aux, b.node_aux) and np.array_equal(a.global_aux, b.global_aux)


@given(graphs(min_n=2, max_n=9), st.randoms(use_true_random=False), st.floats(0, 1))
@settings(max_examples=80, deadline=None)
def test_aux_equivariance(g, r, t):
    sigma = list(range(g.n))
    r.shuffle(sigma)
    a, b = compute_aux(g, t), compute_aux(permute_graph(g, sigma), t)
    assert np.array_equal(b.node_aux[sigma], a.node_aux)
    assert np.array_equal(b.global_aux[:5], a.global_aux[:5])  # integer counts: exact
    assert np.allclose(b.global_aux, a.global_aux, atol=1e-9)
    assert (np.diff(laplacian_spectrum(g.adjacency)) >= -1e-12).all()
