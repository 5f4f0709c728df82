"""Forward corruption process on categorical graphs.

Each node and each unordered node pair evolves as an independent CTMC with
rate ``beta(t) * R`` where ``R`` is a shared base rate matrix. Transition
matrices use the source-row / target-column convention:
``P[u, v] = q(x_t = v | x_0 = u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import CategoricalGraph

UNIFORM = "uniform"
MARGINAL = "marginal"

SCHEDULE_PRESETS = {"fast": (1.0, 5.0), "slow": (0.8, 2.0)}


@dataclass(frozen=True, eq=False)
class RateMatrixSpec:
    kind: str
    dim: int
    marginal: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (UNIFORM, MARGINAL):
            raise ValueError(f"unknown rate matrix kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("alphabet size must be positive")
        if self.kind == MARGINAL:
            if self.marginal is None:
                raise ValueError("marginal spec needs a probability vector")
            m = np.array(self.marginal, dtype=np.float64).reshape(-1)
            if m.shape[0] != self.dim:
                raise ValueError(f"marginal has length {m.shape[0]}, expected {self.dim}")
            if (m < 0).any() or abs(m.sum() - 1.0) > 1e-12:
                raise ValueError("marginal must be nonnegative and sum to 1")
            m.setflags(write=False)
            object.__setattr__(self, "marginal", m)
        else:
            object.__setattr__(self, "marginal", None)

    @classmethod
    def uniform(cls, dim: int) -> "RateMatrixSpec":
        return cls(UNIFORM, int(dim))

    @classmethod
    def from_marginal(cls, m: Sequence[float]) -> "RateMatrixSpec":
        m = np.asarray(m, dtype=np.float64)
        return cls(MARGINAL, int(m.shape[0]), m)

    @property
    def stationary(self) -> np.ndarray:
        if self.kind == MARGINAL:
            return self.marginal.copy()
        return np.full(self.dim, 1.0 / self.dim)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == MARGINAL:
            d["marginal"] = [float(x) for x in self.marginal]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateMatrixSpec":
        return cls(d["kind"], int(d["dim"]), d.get("marginal"))


@dataclass(frozen=True)
class NoiseSchedule:
    """Exponential corruption schedule ``beta(t) = alpha * gamma**t * log(gamma)``."""

    alpha: float = 1.0
    gamma: float = 5.0
    T: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.gamma > 1:
            raise ValueError("gamma must be greater than 1")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @classmethod
    def preset(cls, name: str, T: float = 1.0) -> "NoiseSchedule":
        alpha, gamma = SCHEDULE_PRESETS[name]
        return cls(alpha, gamma, T)

    def beta(self, t):
        return self.alpha * np.power(self.gamma, t) * math.log(self.gamma)


def cumulative_rate(sched: NoiseSchedule, s: float, t: float) -> float:
    """Integral of beta over ``[s, t]``."""
    if s > t:
        raise ValueError(f"cumulative_rate needs s <= t, got s={s}, t={t}")
    if s == t:
        return 0.0
    return float(sched.alpha * (sched.gamma ** t - sched.gamma ** s))


def base_rate_matrix(spec: RateMatrixSpec) -> np.ndarray:
    C = spec.dim
    if spec.kind == UNIFORM:
        return np.ones((C, C)) - C * np.eye(C)
    return np.outer(np.ones(C), spec.marginal) - np.eye(C)


def transition_matrix(spec: RateMatrixSpec, c: float) -> np.ndarray:
    """Closed-form ``exp(c * R)`` for the uniform and marginal base matrices."""
    if c < 0:
        raise ValueError(f"elapsed rate c must be nonnegative, got {c}")
    C = spec.dim
    if spec.kind == UNIFORM:
        decay = math.exp(-c * C)
        P = decay * np.eye(C) + ((1.0 - decay) / C) * np.ones((C, C))
    else:
        decay = math.exp(-c)
        P = decay * np.eye(C) + (1.0 - decay) * np.outer(np.ones(C), spec.marginal)
    return np.maximum(P, 0.0)


def series_matrix_exp(R: np.ndarray, c: float = 1.0) -> np.ndarray:
    """Truncated Taylor series of ``exp(c * R)``.

    Terms are added until the newest one has max-abs entry below 1e-16.
    Large ``c * R`` is handled by scaling and squaring so the series stays
    well-conditioned.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"series_matrix_exp needs a square matrix, got shape {R.shape}")
    A = c * R
    norm = np.abs(A).sum(axis=1).max() if A.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    A = A / (2.0 ** squarings)
    out = np.eye(R.shape[0])
    term = np.eye(R.shape[0])
    k = 0
    while True:
        k += 1
        term = term @ A / k
        out = out + term
        if np.abs(term).max() < 1e-16 or k > 500:
            break
    for _ in range(squarings):
        out = out @ out
    return out


def _sample_rows(P: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of one target per source row."""
    cdf = np.cumsum(P[rows], axis=-1)
    u = rng.random(rows.shape)
    out = (cdf < u[..., None] * cdf[..., -1:]).sum(axis=-1)
    return np.minimum(out, P.shape[1] - 1)


def corrupt_graph(
    g0: CategoricalGraph,
    t: float,
    node_spec: RateMatrixSpec,
    edge_spec: RateMatrixSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> CategoricalGraph:
    """Sample ``G_t ~ q(. | G_0)`` node-wise and pair-wise (upper triangle, mirrored)."""
    if not 0.0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    if t == 0.0:
        return g0
    c = cumulative_rate(sched, 0.0, t)
    Pf = transition_matrix(node_spec, c)
    Pe = transition_matrix(edge_spec, c)
    nodes = _sample_rows(Pf, g0.node_types, rng)
    iu, ju = g0.upper_pairs()
    vals = _sample_rows(Pe, g0.edge_types[iu, ju], rng)
    edges = np.zeros((g0.n, g0.n), dtype=np.int64)
    edges[iu, ju] = vals
    edges[ju, iu] = vals
    return CategoricalGraph(nodes, edges)


def marginals_from_graphs(graphs, num_node_types: int, num_edge_types: int):
    """Empirical node-type and edge-type frequencies (edges over unordered pairs)."""
    node_counts = np.zeros(num_node_types)
    edge_counts = np.zeros(num_edge_types)
    for g in graphs:
        node_counts += np.bincount(g.node_types, minlength=num_node_types)[:num_node_types]
        iu, ju = g.upper_pairs()
        edge_counts += np.bincount(g.edge_types[iu, ju], minlength=num_edge_types)[:num_edge_types]
    if node_counts.sum() == 0:
        raise ValueError("no nodes to count")
    m_f = node_counts / node_counts.sum()
    m_e = edge_counts / edge_counts.sum() if edge_counts.sum() > 0 else np.full(
        num_edge_types, 1.0 / num_edge_types
    )
    return m_f, m_e


@dataclass(frozen=True)
class DiffusionSetup:
    """Node/edge base matrices plus the schedule: everything the forward process needs."""

    node_spec: RateMatrixSpec
    edge_spec: RateMatrixSpec
    sched: NoiseSchedule

    @property
    def reference(self) -> str:
        return self.node_spec.kind

    @classmethod
    def build(cls, reference: str, num_node_types: int, num_edge_types: int,
              sched: NoiseSchedule, m_f=None, m_e=None) -> "DiffusionSetup":
        if reference == UNIFORM:
            return cls(RateMatrixSpec.uniform(num_node_types),
                       RateMatrixSpec.uniform(num_edge_types), sched)
        if reference == MARGINAL:
            if m_f is None or m_e is None:
                raise ValueError("marginal reference needs node and edge marginals")
            return cls(RateMatrixSpec.from_marginal(m_f), RateMatrixSpec.from_marginal(m_e), sched)
        raise ValueError(f"unknown reference kind {reference!r}")

    def to_dict(self) -> dict:
        return {
            "node_spec": self.node_spec.to_dict(),
            "edge_spec": self.edge_spec.to_dict(),
            "schedule": {"alpha": self.sched.alpha, "gamma": self.sched.gamma, "T": self.sched.T},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSetup":
        s = d["schedule"]
        return cls(RateMatrixSpec.from_dict(d["node_spec"]), RateMatrixSpec.from_dict(d["edge_spec"]),
                   NoiseSchedule(float(s["alpha"]), float(s["gamma"]), float(s["T"])))
