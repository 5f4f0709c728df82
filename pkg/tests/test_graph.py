import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphctmc.graph import (
    CategoricalGraph,
    GraphError,
    SizeDistribution,
    canonical_key,
    fit_size_distribution,
    inverse_permutation,
    permute_graph,
    wl_hash,
)

from conftest import graphs, random_graph


def to_nx(g):
    G = nx.Graph()
    for i, t in enumerate(g.node_types):
        G.add_node(i, t=int(t))
    iu, ju = g.upper_pairs()
    for i, j in zip(iu, ju):
        if g.edge_types[i, j]:
            G.add_edge(int(i), int(j), t=int(g.edge_types[i, j]))
    return G


def isomorphic(g, h):
    match = lambda a, b: a["t"] == b["t"]  # noqa: E731
    return nx.is_isomorphic(to_nx(g), to_nx(h), node_match=match, edge_match=match)


def brute_relabel(g, sigma):
    n = g.n
    nodes = np.zeros(n, int)
    E = np.zeros((n, n), int)
    for i in range(n):
        nodes[sigma[i]] = g.node_types[i]
        for j in range(n):
            E[sigma[i], sigma[j]] = g.edge_types[i, j]
    return CategoricalGraph(nodes, E)


class TestCategoricalGraph:
    def test_rejects_asymmetric(self):
        with pytest.raises(GraphError):
            CategoricalGraph([0, 0], [[0, 1], [0, 0]])

    def test_rejects_self_loop(self):
        with pytest.raises(GraphError):
            CategoricalGraph([0, 0], [[1, 0], [0, 0]])

    def test_rejects_empty_and_negative(self):
        with pytest.raises(GraphError):
            CategoricalGraph(np.zeros(0, int), np.zeros((0, 0), int))
        with pytest.raises(GraphError):
            CategoricalGraph([-1], [[0]])

    def test_arrays_are_read_only(self):
        g = CategoricalGraph.from_edges(3, [(0, 1)])
        with pytest.raises(ValueError):
            g.edge_types[0, 1] = 0

    def test_check_alphabet(self):
        g = CategoricalGraph.from_edges(3, [(0, 1, 2)], node_types=[0, 1, 0])
        g.check_alphabet(2, 3)
        with pytest.raises(GraphError):
            g.check_alphabet(2, 2)
        with pytest.raises(GraphError):
            g.check_alphabet(1, 3)


class TestPermute:
    def test_identity(self, rng):
        g = random_graph(rng, 6, 3, 3)
        assert permute_graph(g, np.arange(6)) == g

    def test_triangle_fixed(self):
        tri = CategoricalGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        for sigma in itertools.permutations(range(3)):
            assert np.array_equal(permute_graph(tri, sigma).edge_types, tri.edge_types)

    def test_path_reversal(self):
        path = CategoricalGraph.from_edges(3, [(0, 1), (1, 2)])
        out = permute_graph(path, [2, 1, 0])
        assert out == CategoricalGraph.from_edges(3, [(2, 1), (1, 0)])
        assert out == brute_relabel(path, [2, 1, 0])

    @pytest.mark.parametrize("sigma", [[0, 0, 1], [0, 1], [0, 1, 3]])
    def test_rejects_non_bijection(self, sigma):
        with pytest.raises(GraphError):
            permute_graph(CategoricalGraph.from_edges(3, []), sigma)

    @given(graphs(), st.randoms(use_true_random=False))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_relabel_and_inverts(self, g, r):
        sigma = list(range(g.n))
        r.shuffle(sigma)
        h = permute_graph(g, sigma)
        assert h == brute_relabel(g, sigma)
        assert permute_graph(h, inverse_permutation(sigma)) == g
        # degree multiset, triangle count and per-type edge counts survive relabeling
        A, B = g.adjacency, h.adjacency
        assert sorted(A.sum(1)) == sorted(B.sum(1))
        assert np.trace(A @ A @ A) == np.trace(B @ B @ B)
        assert np.array_equal(np.bincount(g.edge_types.ravel(), minlength=3),
                              np.bincount(h.edge_types.ravel(), minlength=3))


class TestCanonicalKey:
    @given(graphs(max_n=9), st.randoms(use_true_random=False))
    @settings(max_examples=60, deadline=None)
    def test_invariant_under_permutation(self, g, r):
        sigma = list(range(g.n))
        r.shuffle(sigma)
        assert canonical_key(permute_graph(g, sigma)) == canonical_key(g)

    def test_path_vs_triangle(self):
        path = CategoricalGraph.from_edges(3, [(0, 1), (1, 2)])
        tri = CategoricalGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        assert canonical_key(path) != canonical_key(tri)

    def test_c6_vs_two_triangles(self):
        c6 = CategoricalGraph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
        tt = CategoricalGraph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
        assert not isomorphic(c6, tt)
        assert canonical_key(c6) != canonical_key(tt)
        # 1-WL cannot separate these regular graphs; the exact key must
        assert wl_hash(c6) == wl_hash(tt)

    def test_agrees_with_isomorphism_oracle(self):
        rng = np.random.default_rng(7)
        pool = [random_graph(rng, int(rng.integers(4, 8)), 2, 3, 0.45) for _ in range(60)]
        # add relabeled copies so both outcomes are exercised
        pool += [permute_graph(g, rng.permutation(g.n)) for g in pool[:20]]
        for g, h in itertools.combinations(pool, 2):
            if g.n != h.n:
                continue
            assert (canonical_key(g) == canonical_key(h)) == isomorphic(g, h)

    def test_large_graphs_use_wl_fallback(self, rng):
        g = random_graph(rng, 12)
        assert canonical_key(g).startswith("w:")
        assert canonical_key(permute_graph(g, rng.permutation(12))) == canonical_key(g)
        assert canonical_key(random_graph(rng, 5)).startswith("x:")


class TestSizeDistribution:
    def test_singleton(self):
        assert fit_size_distribution([CategoricalGraph.from_edges(5, [])]).counts == {5: 1}

    def test_frequencies(self):
        sizes = fit_size_distribution([CategoricalGraph.from_edges(n, []) for n in (4, 4, 6)])
        assert sizes.counts == {4: 2, 6: 1}
        draws = sizes.sample(np.random.default_rng(0), size=10_000)
        assert abs((draws == 4).mean() - 2 / 3) < 0.02
        assert set(np.unique(draws)) <= {4, 6}

    def test_deterministic(self):
        sizes = SizeDistribution({3: 1, 7: 5})
        a = sizes.sample(np.random.default_rng(3), size=50)
        b = sizes.sample(np.random.default_rng(3), size=50)
        assert np.array_equal(a, b)

    def test_zero_counts_never_sampled(self):
        sizes = SizeDistribution({3: 0, 5: 2})
        assert set(sizes.sample(np.random.default_rng(0), size=100)) == {5}

    def test_empty(self):
        with pytest.raises(GraphError):
            fit_size_distribution([])
        with pytest.raises(GraphError):
            SizeDistribution({}).sample(np.random.default_rng(0))

    def test_dict_roundtrip(self):
        sizes = SizeDistribution({12: 3, 20: 1})
        assert SizeDistribution.from_dict(sizes.to_dict()).counts == sizes.counts
