"""Exact joint-state reference for graphs small enough to enumerate.

The joint generator is the Kronecker sum of the per-component generators
(one component per node and one per unordered node pair). Everything here
works on the full joint state space and never uses the factorized closed
forms, so it can serve as an oracle for them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .graph import CategoricalGraph
from .noise import (
    NoiseSchedule,
    RateMatrixSpec,
    base_rate_matrix,
    cumulative_rate,
    series_matrix_exp,
)

MAX_JOINT_STATES = 64


class StateSpaceTooLarge(ValueError):
    pass


def kron_sum(mats: list[np.ndarray]) -> np.ndarray:
    """``sum_d I x ... x M_d x ... x I`` with row-major component ordering."""
    dims = [m.shape[0] for m in mats]
    total = int(np.prod(dims))
    out = np.zeros((total, total))
    for d, M in enumerate(mats):
        left = int(np.prod(dims[:d]))
        right = int(np.prod(dims[d + 1:]))
        out += np.kron(np.kron(np.eye(left), M), np.eye(right))
    return out


class TinySystem:
    """Joint CTMC over every graph with ``n`` nodes and the given alphabets.

    Components are ordered nodes first, then unordered pairs ``i < j`` in
    ``np.triu_indices`` order. ``data_dist`` is a probability vector over the
    joint states in :attr:`states` order.
    """

    def __init__(self, n, node_spec: RateMatrixSpec, edge_spec: RateMatrixSpec,
                 sched: NoiseSchedule, data_dist=None):
        self.n = int(n)
        self.node_spec = node_spec
        self.edge_spec = edge_spec
        self.sched = sched
        self.pairs = list(zip(*np.triu_indices(self.n, k=1)))
        self.dims = [node_spec.dim] * self.n + [edge_spec.dim] * len(self.pairs)
        size = int(np.prod(self.dims))
        if size > MAX_JOINT_STATES:
            raise StateSpaceTooLarge(f"joint state space has {size} states (> {MAX_JOINT_STATES})")
        self.num_states = size
        self.states = np.array(list(itertools.product(*[range(d) for d in self.dims])),
                               dtype=np.int64).reshape(size, len(self.dims))
        if data_dist is None:
            data_dist = np.full(size, 1.0 / size)
        data_dist = np.asarray(data_dist, dtype=np.float64)
        if data_dist.shape != (size,) or (data_dist < 0).any() or abs(data_dist.sum() - 1) > 1e-9:
            raise ValueError("data_dist must be a probability vector over the joint states")
        self.data_dist = data_dist

    # --- state <-> graph -------------------------------------------------

    def state_graph(self, idx: int) -> CategoricalGraph:
        x = self.states[idx]
        edges = np.zeros((self.n, self.n), dtype=np.int64)
        for k, (i, j) in enumerate(self.pairs):
            edges[i, j] = edges[j, i] = x[self.n + k]
        return CategoricalGraph(x[: self.n], edges)

    def graph_state(self, g: CategoricalGraph) -> int:
        comps = list(g.node_types) + [g.edge_types[i, j] for i, j in self.pairs]
        return int(np.ravel_multi_index(tuple(int(c) for c in comps), self.dims))

    def component_specs(self) -> list[RateMatrixSpec]:
        return [self.node_spec] * self.n + [self.edge_spec] * len(self.pairs)

    # --- joint quantities -------------------------------------------------

    @cached_property
    def generator(self) -> np.ndarray:
        """Time-independent joint base generator (multiply by beta(t))."""
        return kron_sum([base_rate_matrix(s) for s in self.component_specs()])

    @cached_property
    def _eig(self):
        lam, V = np.linalg.eig(self.generator)
        Vinv = np.linalg.inv(V)
        return lam, V, Vinv

    def joint_transition(self, c: float) -> np.ndarray:
        return series_matrix_exp(self.generator, c)

    def marginal(self, t: float) -> np.ndarray:
        c = cumulative_rate(self.sched, 0.0, t)
        return self.data_dist @ self.joint_transition(c)

    def marginals_many(self, ts: np.ndarray) -> np.ndarray:
        """Marginals at many times via one eigendecomposition of the generator."""
        ts = np.asarray(ts, dtype=np.float64)
        cs = self.sched.alpha * (self.sched.gamma ** ts - 1.0)
        lam, V, Vinv = self._eig
        w = self.data_dist @ V  # (S,)
        out = (w[None, :] * np.exp(cs[:, None] * lam[None, :])) @ Vinv
        return np.maximum(out.real, 0.0)

    def posterior(self, t: float) -> np.ndarray:
        """``post[x_t, x_0] = q(x_0 | x_t)``; rows of unreachable ``x_t`` are zero."""
        c = cumulative_rate(self.sched, 0.0, t)
        P = self.joint_transition(c)
        joint = self.data_dist[:, None] * P  # [x0, xt]
        qt = joint.sum(axis=0)
        post = np.zeros_like(joint.T)
        ok = qt > 0
        post[ok] = joint.T[ok] / qt[ok, None]
        return post

    def reverse_rates_from_marginal(self, qt: np.ndarray, t: float) -> np.ndarray:
        """``Rrev[x, y] = q(y)/q(x) * beta(t) * R(y, x)`` off-diagonal; zero for q(x)=0."""
        R = self.sched.beta(t) * self.generator
        rev = np.zeros_like(R)
        ok = qt > 0
        rev[ok] = qt[None, :] * R.T[ok] / qt[ok, None]
        np.fill_diagonal(rev, 0.0)
        np.fill_diagonal(rev, -rev.sum(axis=1))
        return rev

    def reverse_rates(self, t: float) -> np.ndarray:
        return self.reverse_rates_from_marginal(self.marginal(t), t)

    def component_posteriors(self, t: float) -> np.ndarray:
        """``out[x_t, d, v] = q(x_0^d = v | x_t)`` padded to the largest alphabet."""
        post = self.posterior(t)
        D = len(self.dims)
        out = np.zeros((self.num_states, D, max(self.dims)))
        for d in range(D):
            for v in range(self.dims[d]):
                out[:, d, v] = post[:, self.states[:, d] == v].sum(axis=1)
        return out

    def project(self, dist: np.ndarray, d: int) -> np.ndarray:
        """Marginal of component ``d`` under a joint distribution."""
        return np.bincount(self.states[:, d], weights=dist, minlength=self.dims[d])

    def reference_distribution(self) -> np.ndarray:
        """Product of the per-component stationary distributions."""
        out = np.ones(self.num_states)
        for d, spec in enumerate(self.component_specs()):
            out *= spec.stationary[self.states[:, d]]
        return out


@dataclass
class TinyOracleResult:
    system: TinySystem
    marginal: np.ndarray
    posterior: np.ndarray
    reverse_rates: np.ndarray


def tiny_joint_oracle(data_dist, node_spec, edge_spec, sched, t, n: int = 2) -> TinyOracleResult:
    system = TinySystem(n, node_spec, edge_spec, sched, data_dist)
    qt = system.marginal(t)
    rev = system.reverse_rates_from_marginal(qt, t)
    return TinyOracleResult(system, qt, system.posterior(t), rev)
