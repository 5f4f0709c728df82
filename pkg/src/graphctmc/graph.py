"""Categorical graphs, node permutations, isomorphism keys and size distributions.

Edge type 0 is the "no edge" state. Graphs are undirected: the edge matrix is
symmetric and the diagonal is pinned to 0.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EXACT_KEY_THRESHOLD = 9
WL_ROUNDS = 3


class GraphError(ValueError):
    """Invalid graph data or graph operation arguments."""


@dataclass(frozen=True, eq=False)
class CategoricalGraph:
    node_types: np.ndarray
    edge_types: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.node_types, dtype=np.int64).reshape(-1)
        edges = np.array(self.edge_types, dtype=np.int64)
        n = nodes.shape[0]
        if n < 1:
            raise GraphError("graph must have at least one node")
        if edges.shape != (n, n):
            raise GraphError(f"edge_types must be {n}x{n}, got {edges.shape}")
        if (nodes < 0).any() or (edges < 0).any():
            raise GraphError("types must be nonnegative")
        if not np.array_equal(edges, edges.T):
            raise GraphError("edge_types must be symmetric")
        if np.diagonal(edges).any():
            raise GraphError("self-loops are not allowed (diagonal must be 0)")
        nodes.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "node_types", nodes)
        object.__setattr__(self, "edge_types", edges)

    @property
    def n(self) -> int:
        return int(self.node_types.shape[0])

    @property
    def adjacency(self) -> np.ndarray:
        """Binarized adjacency (any nonzero edge type counts as an edge)."""
        return (self.edge_types > 0).astype(np.float64)

    def upper_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.n, k=1)

    def check_alphabet(self, num_node_types: int, num_edge_types: int) -> None:
        """Raise if any type falls outside ``[0, b)`` / ``[0, a+1)``."""
        if self.node_types.max() >= num_node_types:
            raise GraphError(
                f"node type {int(self.node_types.max())} outside alphabet of size {num_node_types}"
            )
        if self.edge_types.max() >= num_edge_types:
            raise GraphError(
                f"edge type {int(self.edge_types.max())} outside alphabet of size {num_edge_types}"
            )

    def __eq__(self, other):
        if not isinstance(other, CategoricalGraph):
            return NotImplemented
        return np.array_equal(self.node_types, other.node_types) and np.array_equal(
            self.edge_types, other.edge_types
        )

    def __repr__(self):
        m = int((self.edge_types > 0).sum() // 2)
        return f"CategoricalGraph(n={self.n}, edges={m})"

    @classmethod
    def from_edges(
        cls, n: int, edges: Iterable[tuple[int, int] | tuple[int, int, int]], node_types=None
    ) -> "CategoricalGraph":
        """Build a graph from ``(i, j)`` or ``(i, j, type)`` tuples."""
        mat = np.zeros((n, n), dtype=np.int64)
        for e in edges:
            i, j = int(e[0]), int(e[1])
            typ = int(e[2]) if len(e) > 2 else 1
            mat[i, j] = mat[j, i] = typ
        if node_types is None:
            node_types = np.zeros(n, dtype=np.int64)
        return cls(np.asarray(node_types), mat)


def permute_graph(g: CategoricalGraph, sigma: Sequence[int]) -> CategoricalGraph:
    """Relabel nodes so that node ``i`` of ``g`` becomes node ``sigma[i]``."""
    sigma = np.asarray(sigma, dtype=np.int64).reshape(-1)
    if sigma.shape[0] != g.n or not np.array_equal(np.sort(sigma), np.arange(g.n)):
        raise GraphError(f"sigma is not a permutation of 0..{g.n - 1}")
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(g.n)
    # result[sigma[i]] = g[i]  <=>  result[k] = g[inv[k]]
    return CategoricalGraph(g.node_types[inv], g.edge_types[np.ix_(inv, inv)])


def inverse_permutation(sigma: Sequence[int]) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.int64)
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(sigma.shape[0])
    return inv


# ---------------------------------------------------------------------------
# isomorphism keys


def _digest(obj) -> str:
    return hashlib.blake2b(repr(obj).encode(), digest_size=16).hexdigest()


def _refine_colors(g: CategoricalGraph, rounds: int | None) -> list[list[str]]:
    """Colour refinement over node types and multisets of (edge type, neighbour colour).

    Colours are content digests, so they are canonical (independent of node
    order). Returns the colour list of every round, round 0 first.
    """
    colors = [_digest(("t", int(x))) for x in g.node_types]
    history = [colors]
    edges = g.edge_types
    r = 0
    while rounds is None or r < rounds:
        new = []
        for i in range(g.n):
            nbrs = np.nonzero(edges[i])[0]
            sig = sorted((int(edges[i, j]), colors[j]) for j in nbrs)
            new.append(_digest((colors[i], sig)))
        r += 1
        stable = len(set(new)) == len(set(colors))
        colors = new
        history.append(colors)
        if rounds is None and stable:
            break
    return history


def wl_hash(g: CategoricalGraph, rounds: int = WL_ROUNDS) -> str:
    """Weisfeiler-Lehman hash: equal for isomorphic graphs, collisions possible."""
    history = _refine_colors(g, rounds)
    summary = [sorted(Counter(c).items()) for c in history]
    return _digest((g.n, summary))


def _canonical_form(g: CategoricalGraph) -> bytes:
    """Lexicographically smallest upper-triangle code over class-respecting orderings."""
    n = g.n
    if g.edge_types.max() > 255:
        raise GraphError("canonical form supports at most 256 edge types")
    colors = _refine_colors(g, None)[-1]
    classes: dict[str, list[int]] = {}
    for i, c in enumerate(colors):
        classes.setdefault(c, []).append(i)
    ordered = [classes[c] for c in sorted(classes)]
    iu, ju = np.triu_indices(n, k=1)
    blocks = [np.array(list(itertools.permutations(cls)), dtype=np.int64) for cls in ordered]
    # cartesian product of per-class permutations -> full orderings
    orders = blocks[0]
    for blk in blocks[1:]:
        orders = np.concatenate(
            [np.repeat(orders, len(blk), axis=0), np.tile(blk, (len(orders), 1))], axis=1
        )
    best = None
    for start in range(0, len(orders), 40320):
        chunk = orders[start:start + 40320]
        codes = g.edge_types[chunk[:, iu], chunk[:, ju]].astype(np.uint8)
        idx = np.lexsort(codes.T[::-1])[0]
        cand = codes[idx].tobytes()
        if best is None or cand < best:
            best = cand
    node_part = g.node_types[np.concatenate([np.array(c) for c in ordered])]
    return node_part.astype(np.int16).tobytes() + b"|" + best


def canonical_key(g: CategoricalGraph, exact_threshold: int = EXACT_KEY_THRESHOLD) -> str:
    """Isomorphism key.

    Graphs with ``n <= exact_threshold`` get an exact canonical form (colour
    refinement followed by exhaustive search inside colour classes). Larger
    graphs get a WL hash, for which equal keys do not guarantee isomorphism.
    """
    if g.n <= exact_threshold:
        if g.n <= 1:
            form = g.node_types.astype(np.int16).tobytes()
        else:
            form = _canonical_form(g)
        return "x:" + hashlib.blake2b(form, digest_size=16).hexdigest()
    return "w:" + wl_hash(g)


# ---------------------------------------------------------------------------
# graph sizes


@dataclass
class SizeDistribution:
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def probabilities(self) -> tuple[np.ndarray, np.ndarray]:
        sizes = np.array(sorted(k for k, v in self.counts.items() if v > 0), dtype=np.int64)
        freq = np.array([self.counts[int(k)] for k in sizes], dtype=np.float64)
        return sizes, freq / freq.sum()

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if self.total <= 0:
            raise GraphError("cannot sample from an empty size distribution")
        sizes, probs = self.probabilities()
        out = rng.choice(sizes, size=size, p=probs)
        return int(out) if size is None else out.astype(np.int64)

    def to_dict(self) -> dict[str, int]:
        return {str(k): int(v) for k, v in sorted(self.counts.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "SizeDistribution":
        return cls({int(k): int(v) for k, v in d.items()})


def fit_size_distribution(graphs: Sequence[CategoricalGraph]) -> SizeDistribution:
    if len(graphs) == 0:
        raise GraphError("cannot fit a size distribution to an empty graph list")
    return SizeDistribution(dict(sorted(Counter(g.n for g in graphs).items())))
