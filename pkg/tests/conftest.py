import numpy as np
import pytest
from hypothesis import strategies as st

from graphctmc.graph import CategoricalGraph


def random_graph(rng, n, num_node_types=1, num_edge_types=2, density=0.4):
    nodes = rng.integers(0, num_node_types, size=n)
    upper = np.triu(rng.random((n, n)) < density, k=1)
    types = rng.integers(1, num_edge_types, size=(n, n)) if num_edge_types > 1 else np.zeros((n, n), int)
    E = np.where(upper, types, 0)
    return CategoricalGraph(nodes, E + E.T)


@st.composite
def graphs(draw, min_n=1, max_n=8, num_node_types=3, num_edge_types=3):
    n = draw(st.integers(min_n, max_n))
    nodes = draw(st.lists(st.integers(0, num_node_types - 1), min_size=n, max_size=n))
    npairs = n * (n - 1) // 2
    vals = draw(st.lists(st.integers(0, num_edge_types - 1), min_size=npairs, max_size=npairs))
    E = np.zeros((n, n), dtype=np.int64)
    iu, ju = np.triu_indices(n, k=1)
    E[iu, ju] = vals
    return CategoricalGraph(np.array(nodes, dtype=np.int64), E + E.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
