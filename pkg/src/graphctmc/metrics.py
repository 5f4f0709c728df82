"""Sample-quality metrics: graph statistics, Gaussian-TV MMD, uniqueness and novelty."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import CategoricalGraph, canonical_key

STATISTICS = ("degree", "clustering", "orbit4")
REPORT_NAMES = {"degree": "deg", "clustering": "clus", "orbit4": "orbit"}
CLUSTERING_BINS = 100
ORBIT_BINS = 12  # count 0, then [1,2), [2,4), ..., last bin open-ended
NUM_ORBITS = 11
BASELINE_FLOOR = 1e-12

# (edges in the induced subgraph, node degree, max degree) -> orbit id
_ORBIT_TABLE = {
    (3, 1, 2): 0,  # path end
    (3, 2, 2): 1,  # path middle
    (3, 1, 3): 2,  # star leaf
    (3, 3, 3): 3,  # star center
    (4, 2, 2): 4,  # 4-cycle
    (4, 1, 3): 5,  # tailed triangle: tail
    (4, 3, 3): 6,  # tailed triangle: hub
    (4, 2, 3): 7,  # tailed triangle: other triangle nodes
    (5, 2, 3): 8,  # diamond: degree-2 nodes
    (5, 3, 3): 9,  # diamond: degree-3 nodes
    (6, 3, 3): 10,  # complete graph
}


def _orbit_lookup() -> np.ndarray:
    table = np.full((7, 4, 4), -1, dtype=np.int64)
    for (m, d, dmax), orbit in _ORBIT_TABLE.items():
        table[m, d, dmax] = orbit
    return table


_ORBIT_LOOKUP = _orbit_lookup()
_QUAD_PAIRS = list(itertools.combinations(range(4), 2))


def orbit_counts(A: np.ndarray, chunk: int = 200_000) -> np.ndarray:
    """Per-node orbit counts ``(n, 11)`` over connected induced 4-node subgraphs."""
    A = (np.asarray(A) > 0).astype(np.int64)
    n = A.shape[0]
    out = np.zeros((n, NUM_ORBITS), dtype=np.int64)
    if n < 4:
        return out
    combos = itertools.combinations(range(n), 4)
    while True:
        quads = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)),
                            dtype=np.int64)
        if quads.size == 0:
            break
        quads = quads.reshape(-1, 4)
        deg = np.zeros_like(quads)
        for a, b in _QUAD_PAIRS:
            e = A[quads[:, a], quads[:, b]]
            deg[:, a] += e
            deg[:, b] += e
        m = deg.sum(axis=1) // 2
        connected = (m >= 3) & (deg.min(axis=1) > 0)
        quads, deg, m = quads[connected], deg[connected], m[connected]
        dmax = deg.max(axis=1)
        orbits = _ORBIT_LOOKUP[m[:, None], deg, dmax[:, None]]
        np.add.at(out, (quads, orbits), 1)
    return out


def _log2_bins(counts: np.ndarray) -> np.ndarray:
    bins = np.zeros(counts.shape, dtype=np.int64)
    pos = counts > 0
    bins[pos] = 1 + np.floor(np.log2(counts[pos])).astype(np.int64)
    return np.minimum(bins, ORBIT_BINS - 1)


def clustering_coefficients(A: np.ndarray) -> np.ndarray:
    A = (np.asarray(A) > 0).astype(np.float64)
    d = A.sum(axis=1)
    tri = np.diagonal(A @ A @ A) / 2.0
    pairs = d * (d - 1) / 2.0
    return np.divide(tri, pairs, out=np.zeros_like(tri), where=pairs > 0)


def graph_statistic(g: CategoricalGraph, kind: str) -> np.ndarray:
    """Normalized histogram summarizing ``g`` (edges binarized)."""
    A = g.adjacency
    n = g.n
    if kind == "degree":
        hist = np.bincount(A.sum(axis=1).astype(np.int64), minlength=n).astype(np.float64)
    elif kind == "clustering":
        hist, _ = np.histogram(clustering_coefficients(A), bins=CLUSTERING_BINS, range=(0.0, 1.0))
        hist = hist.astype(np.float64)
    elif kind == "orbit4":
        bins = _log2_bins(orbit_counts(A))  # (n, 11)
        hist = np.zeros((NUM_ORBITS, ORBIT_BINS))
        np.add.at(hist, (np.broadcast_to(np.arange(NUM_ORBITS), bins.shape), bins), 1.0)
        hist = hist.reshape(-1)
    else:
        raise ValueError(f"unknown statistic {kind!r}; expected one of {STATISTICS}")
    return hist / hist.sum()


def _pad(hists: Sequence[np.ndarray], length: int) -> np.ndarray:
    out = np.zeros((len(hists), length))
    for k, h in enumerate(hists):
        out[k, : len(h)] = h
    return out


def _kernel_mean(X: np.ndarray, Y: np.ndarray, sigma: float) -> float:
    tv = 0.5 * np.abs(X[:, None, :] - Y[None, :, :]).sum(axis=-1)
    return float(np.exp(-(tv ** 2) / (2.0 * sigma ** 2)).mean())


def mmd2_biased(X: Sequence[np.ndarray], Y: Sequence[np.ndarray], sigma: float = 1.0) -> float:
    """Biased squared MMD with kernel ``exp(-TV(x, y)^2 / (2 sigma^2))``."""
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("mmd2_biased needs two nonempty sets")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    length = max(max(len(h) for h in X), max(len(h) for h in Y))
    Xp, Yp = _pad(X, length), _pad(Y, length)
    return _kernel_mean(Xp, Xp, sigma) + _kernel_mean(Yp, Yp, sigma) - 2.0 * _kernel_mean(Xp, Yp, sigma)


@dataclass
class Score:
    raw: float
    baseline: float
    score: float | None  # None when the baseline is too small to divide by

    @property
    def defined(self) -> bool:
        return self.score is not None

    def to_dict(self) -> dict:
        return {"raw": self.raw, "baseline": self.baseline, "score": self.score,
                "defined": self.defined}


def relative_score(gen, train, test, kind: str, sigma: float = 1.0) -> Score:
    """``MMD^2(gen, test) / MMD^2(train, test)`` on the chosen statistic."""
    for name, graphs in (("generated", gen), ("train", train), ("test", test)):
        if len(graphs) == 0:
            raise ValueError(f"empty {name} set")
    stats = {key: [graph_statistic(g, kind) for g in graphs]
             for key, graphs in (("gen", gen), ("train", train), ("test", test))}
    raw = max(mmd2_biased(stats["gen"], stats["test"], sigma), 0.0)
    baseline = max(mmd2_biased(stats["train"], stats["test"], sigma), 0.0)
    return Score(raw, baseline, raw / baseline if baseline > BASELINE_FLOOR else None)


def uniqueness_novelty(gen: Sequence[CategoricalGraph],
                       train: Sequence[CategoricalGraph]) -> tuple[float, float]:
    if len(gen) == 0:
        raise ValueError("empty generated set")
    keys = [canonical_key(g) for g in gen]
    train_keys = {canonical_key(g) for g in train}
    uniqueness = len(set(keys)) / len(keys)
    novelty = sum(k not in train_keys for k in keys) / len(keys)
    return uniqueness, novelty


@dataclass
class EvalReport:
    scores: dict[str, Score] = field(default_factory=dict)
    uniqueness: float = 0.0
    novelty: float = 0.0
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {REPORT_NAMES[k]: v.to_dict() for k, v in self.scores.items()}
        out.update(uniqueness=self.uniqueness, novelty=self.novelty, counts=self.counts)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate(gen, train, test, kinds: Sequence[str] = STATISTICS, sigma: float = 1.0) -> EvalReport:
    if len(gen) == 0:
        raise ValueError("empty generated set")
    scores = {kind: relative_score(gen, train, test, kind, sigma) for kind in kinds}
    uniq, nov = uniqueness_novelty(gen, train)
    return EvalReport(scores, uniq, nov, {"gen": len(gen), "train": len(train), "test": len(test)})
