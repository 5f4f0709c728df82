"""Synthetic graph datasets (two-community and stochastic block model) and JSONL I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import CategoricalGraph, GraphError

KINDS = ("community", "sbm")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "community"
    count: int = 100
    seed: int = 0
    block_size_range: tuple[int, int] | None = None  # inclusive
    num_blocks_range: tuple[int, int] | None = None  # inclusive
    p_intra: float | None = None
    p_inter: float | None = None  # sbm only
    inter_edge_fraction: float = 0.05  # community only: ceil(fraction * n) cross edges

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        defaults = {
            "community": ((6, 10), (2, 2), 0.7, 0.0),
            "sbm": ((8, 12), (2, 3), 0.3, 0.05),
        }[self.kind]
        for name, value in zip(("block_size_range", "num_blocks_range", "p_intra", "p_inter"),
                               defaults):
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        lo, hi = self.block_size_range
        if not 1 <= lo <= hi:
            raise ValueError("block sizes must be positive with min <= max")
        lo, hi = self.num_blocks_range
        if not 1 <= lo <= hi:
            raise ValueError("block counts must be positive with min <= max")
        for name in ("p_intra", "p_inter", "inter_edge_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _block_graph(sizes: Sequence[int], p_intra: float, rng: np.random.Generator):
    n = int(sum(sizes))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    same = labels[:, None] == labels[None, :]
    A = np.triu((rng.random((n, n)) < p_intra) & same, k=1)
    return A, labels


def community_graph(spec: DatasetSpec, rng: np.random.Generator) -> CategoricalGraph:
    lo, hi = spec.block_size_range
    sizes = rng.integers(lo, hi + 1, size=2)
    A, labels = _block_graph(sizes, spec.p_intra, rng)
    n = A.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    cross = np.flatnonzero(labels[iu] != labels[ju])
    k = min(math.ceil(spec.inter_edge_fraction * n), cross.size)
    pick = rng.choice(cross, size=k, replace=False)
    A[iu[pick], ju[pick]] = True
    return _to_graph(A)


def sbm_graph(spec: DatasetSpec, rng: np.random.Generator) -> CategoricalGraph:
    lo, hi = spec.num_blocks_range
    k = int(rng.integers(lo, hi + 1))
    blo, bhi = spec.block_size_range
    sizes = rng.integers(blo, bhi + 1, size=k)
    A, labels = _block_graph(sizes, spec.p_intra, rng)
    n = A.shape[0]
    cross = np.triu(labels[:, None] != labels[None, :], k=1)
    A |= cross & (rng.random((n, n)) < spec.p_inter)
    return _to_graph(A)


def _to_graph(upper: np.ndarray) -> CategoricalGraph:
    E = np.triu(upper, k=1).astype(np.int64)
    return CategoricalGraph(np.zeros(E.shape[0], dtype=np.int64), E + E.T)


def generate_dataset(spec: DatasetSpec) -> list[CategoricalGraph]:
    """Deterministic in ``spec``; graph ``k`` uses its own stream spawned from ``spec.seed``."""
    make = community_graph if spec.kind == "community" else sbm_graph
    streams = np.random.SeedSequence(spec.seed).spawn(spec.count)
    return [make(spec, np.random.default_rng(s)) for s in streams]


def split_dataset(graphs: Sequence[CategoricalGraph], seed: int = 0, train_fraction: float = 0.8):
    """Seed-shuffled train/test split; the train part gets ``round(fraction * len)`` graphs."""
    order = np.random.default_rng(seed).permutation(len(graphs))
    cut = int(round(train_fraction * len(graphs)))
    return [graphs[k] for k in order[:cut]], [graphs[k] for k in order[cut:]]


# ---------------------------------------------------------------------------
# JSONL


class FormatError(ValueError):
    pass


def graph_to_record(g: CategoricalGraph) -> dict:
    iu, ju = g.upper_pairs()
    types = g.edge_types[iu, ju]
    keep = types > 0
    return {
        "n": g.n,
        "nodes": [int(x) for x in g.node_types],
        "edges": [[int(i), int(j), int(t)] for i, j, t in zip(iu[keep], ju[keep], types[keep])],
    }


def graph_from_record(rec, num_node_types: int | None = None,
                      num_edge_types: int | None = None) -> CategoricalGraph:
    """Parse one record; raises :class:`FormatError` naming the offending field."""
    if not isinstance(rec, dict):
        raise FormatError("record must be a JSON object")
    for key in ("n", "nodes", "edges"):
        if key not in rec:
            raise FormatError(f"missing field {key!r}")
    n = rec["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise FormatError(f"field 'n': expected a positive integer, got {n!r}")
    nodes = rec["nodes"]
    if not isinstance(nodes, list) or len(nodes) != n:
        raise FormatError(f"field 'nodes': expected a list of {n} integers")
    for k, v in enumerate(nodes):
        if not isinstance(v, int) or isinstance(v, bool) or v < 0 or (
                num_node_types is not None and v >= num_node_types):
            raise FormatError(f"field 'nodes[{k}]': type {v!r} out of range")
    if not isinstance(rec["edges"], list):
        raise FormatError("field 'edges': expected a list")
    E = np.zeros((n, n), dtype=np.int64)
    for k, e in enumerate(rec["edges"]):
        where = f"field 'edges[{k}]'"
        if not (isinstance(e, list) and len(e) == 3
                and all(isinstance(x, int) and not isinstance(x, bool) for x in e)):
            raise FormatError(f"{where}: expected [i, j, type] integers")
        i, j, t = e
        if not 0 <= i < j < n:
            raise FormatError(f"{where}: need 0 <= i < j < n, got i={i}, j={j}, n={n}")
        if t < 1 or (num_edge_types is not None and t >= num_edge_types):
            raise FormatError(f"{where}: edge type {t} out of range")
        if E[i, j] != 0:
            raise FormatError(f"{where}: duplicate pair ({i}, {j})")
        E[i, j] = E[j, i] = t
    try:
        return CategoricalGraph(np.asarray(nodes, dtype=np.int64), E)
    except GraphError as exc:
        raise FormatError(str(exc)) from None


def write_jsonl(graphs: Sequence[CategoricalGraph], path) -> None:
    lines = [json.dumps(graph_to_record(g), separators=(",", ":")) + "\n" for g in graphs]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_jsonl(path, num_node_types: int | None = None,
               num_edge_types: int | None = None) -> list[CategoricalGraph]:
    graphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                graphs.append(graph_from_record(rec, num_node_types, num_edge_types))
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return graphs
