"""Reverse-time generation: parameterized reverse rates and tau-leaping.

Also hosts two reference samplers for enumerable systems: a batched tau-leap
driver over joint states (same rate and leap code as ``generate``) and an
exact reverse-CTMC simulator that uses thinning on the true reverse rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .graph import CategoricalGraph, SizeDistribution
from .noise import (
    DiffusionSetup,
    NoiseSchedule,
    RateMatrixSpec,
    base_rate_matrix,
    cumulative_rate,
    transition_matrix,
)
from .tiny import TinySystem

RATIO_FLOOR = 1e-30


class ConfigMismatch(ValueError):
    """Sampling settings disagree with the settings a checkpoint was trained with."""


class Denoiser(Protocol):
    def predict(self, g: CategoricalGraph, t: float, T: float = 1.0): ...


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100
    num_samples: int = 1
    seed: int = 0
    num_nodes: int | None = None  # fixed size; None draws from the size distribution

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.num_samples < 0:
            raise ValueError("num_samples must be nonnegative")
        if self.num_nodes is not None and self.num_nodes < 1:
            raise ValueError("num_nodes must be positive")


def component_reverse_rates(x: np.ndarray, post: np.ndarray, spec: RateMatrixSpec,
                            sched: NoiseSchedule, t: float) -> np.ndarray:
    """Reverse jump rates for a batch of independent components.

    ``x`` holds current states ``(N,)``, ``post`` the predicted clean-state
    probabilities ``(N, K)``. Returns ``(N, K)`` rates with zeros in the
    current-state column.
    """
    if not t > 0:
        raise ValueError(f"reverse rates need t > 0, got t={t}")
    x = np.asarray(x, dtype=np.int64)
    Q = transition_matrix(spec, cumulative_rate(sched, 0.0, t))  # [x0, x_t]
    R = base_rate_matrix(spec)
    denom = Q[:, x].T  # (N, K0): q(x_t = x | x0)
    safe = np.where(denom > 0, 1.0 / np.maximum(denom, RATIO_FLOOR), 0.0)
    # sum_x0 Q[x0, s] / Q[x0, x] * post[x0]
    weight = (post * safe) @ Q  # (N, K)
    rates = sched.beta(t) * R[:, x].T * weight
    rates[np.arange(x.shape[0]), x] = 0.0
    return np.maximum(rates, 0.0)


def reverse_rates(g_t: CategoricalGraph, t: float, F_hat: np.ndarray, E_hat: np.ndarray,
                  setup: DiffusionSetup) -> tuple[np.ndarray, np.ndarray]:
    """Node rates ``(n, b)`` and edge rates ``(pairs, a+1)`` over ``i < j`` pairs."""
    node_rates = component_reverse_rates(g_t.node_types, F_hat, setup.node_spec, setup.sched, t)
    iu, ju = g_t.upper_pairs()
    edge_rates = component_reverse_rates(g_t.edge_types[iu, ju], E_hat[iu, ju],
                                         setup.edge_spec, setup.sched, t)
    return node_rates, edge_rates


def leap_components(states: np.ndarray, rates: np.ndarray, tau: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Poisson jump counts per target; move only when exactly one jump fired."""
    jumps = rng.poisson(tau * rates)
    single = jumps.sum(axis=-1) == 1
    return np.where(single, jumps.argmax(axis=-1), states)


def tau_leap_step(g_t: CategoricalGraph, t: float, tau: float, model: Denoiser,
                  setup: DiffusionSetup, rng: np.random.Generator) -> CategoricalGraph:
    """Advance from time ``t`` to ``t - tau`` with rates frozen at ``t``."""
    if tau > t:
        raise ValueError(f"tau={tau} exceeds current time t={t}")
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    F_hat, E_hat = model.predict(g_t, t, setup.sched.T)
    node_rates, edge_rates = reverse_rates(g_t, t, F_hat, E_hat, setup)
    nodes = leap_components(g_t.node_types, node_rates, tau, rng)
    iu, ju = g_t.upper_pairs()
    vals = leap_components(g_t.edge_types[iu, ju], edge_rates, tau, rng)
    edges = np.zeros_like(g_t.edge_types)
    edges[iu, ju] = vals
    edges[ju, iu] = vals
    return CategoricalGraph(nodes, edges)


def sample_reference(n: int, setup: DiffusionSetup, rng: np.random.Generator) -> CategoricalGraph:
    """Draw a graph with independent node and pair types from the stationary distributions."""
    nodes = rng.choice(setup.node_spec.dim, size=n, p=setup.node_spec.stationary)
    iu, ju = np.triu_indices(n, k=1)
    vals = rng.choice(setup.edge_spec.dim, size=iu.shape[0], p=setup.edge_spec.stationary)
    edges = np.zeros((n, n), dtype=np.int64)
    edges[iu, ju] = vals
    edges[ju, iu] = vals
    return CategoricalGraph(nodes.astype(np.int64), edges)


def step_times(T: float, steps: int) -> np.ndarray:
    """Right endpoints ``T (K - k) / K`` for ``k = 0..K-1``."""
    return T * (steps - np.arange(steps)) / steps


def run_reverse(g_T: CategoricalGraph, model: Denoiser, setup: DiffusionSetup, steps: int,
                rng: np.random.Generator) -> CategoricalGraph:
    tau = setup.sched.T / steps
    g = g_T
    for t in step_times(setup.sched.T, steps):
        g = tau_leap_step(g, float(t), min(tau, float(t)), model, setup, rng)
    return g


def generate(model: Denoiser, setup: DiffusionSetup, cfg: SamplerConfig,
             sizes: SizeDistribution | None = None) -> list[CategoricalGraph]:
    """Independent reverse chains, one RNG stream per sample spawned from ``cfg.seed``."""
    if cfg.num_nodes is None and sizes is None:
        raise ValueError("need either a fixed node count or a size distribution")
    out = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.num_samples):
        rng = np.random.default_rng(child)
        n = cfg.num_nodes if cfg.num_nodes is not None else sizes.sample(rng)
        out.append(run_reverse(sample_reference(n, setup, rng), model, setup, cfg.steps, rng))
    return out


def resolve_setup(trained: DiffusionSetup, reference: str | None = None,
                  alpha: float | None = None, gamma: float | None = None,
                  force: bool = False, marginals=None) -> DiffusionSetup:
    """Apply sampling-time overrides, refusing any that differ from training unless forced."""
    diffs = []
    if reference is not None and reference != trained.reference:
        diffs.append(f"reference {reference!r} != trained {trained.reference!r}")
    if alpha is not None and alpha != trained.sched.alpha:
        diffs.append(f"alpha {alpha} != trained {trained.sched.alpha}")
    if gamma is not None and gamma != trained.sched.gamma:
        diffs.append(f"gamma {gamma} != trained {trained.sched.gamma}")
    if not diffs:
        return trained
    if not force:
        raise ConfigMismatch("sampling config does not match checkpoint: " + "; ".join(diffs)
                             + " (pass --force to override)")
    sched = NoiseSchedule(alpha if alpha is not None else trained.sched.alpha,
                          gamma if gamma is not None else trained.sched.gamma, trained.sched.T)
    m_f, m_e = marginals if marginals is not None else (None, None)
    return DiffusionSetup.build(reference or trained.reference, trained.node_spec.dim,
                                trained.edge_spec.dim, sched, m_f, m_e)


# ---------------------------------------------------------------------------
# enumerable systems


class ExactPosteriorDenoiser:
    """Stand-in model returning exact per-component clean-state posteriors."""

    def __init__(self, system: TinySystem):
        self.system = system

    def predict(self, g: CategoricalGraph, t: float, T: float = 1.0):
        sysm = self.system
        comp = sysm.component_posteriors(t)[sysm.graph_state(g)]
        n, b, c = sysm.n, sysm.node_spec.dim, sysm.edge_spec.dim
        F = comp[:n, :b]
        E = np.zeros((n, n, c))
        E[np.arange(n), np.arange(n), 0] = 1.0
        for k, (i, j) in enumerate(sysm.pairs):
            E[i, j] = E[j, i] = comp[n + k, :c]
        return F, E


def _tiny_setup(system: TinySystem) -> DiffusionSetup:
    return DiffusionSetup(system.node_spec, system.edge_spec, system.sched)


def simulate_tiny_tau_leap(system: TinySystem, steps: int, num_samples: int,
                           rng: np.random.Generator, model: Denoiser | None = None,
                           start: np.ndarray | None = None) -> np.ndarray:
    """Batched tau-leaping over joint states; returns end-state counts.

    Rates are evaluated once per distinct joint state per step through
    :func:`reverse_rates`, then every chain leaps with :func:`leap_components`.
    Chains start from the reference distribution unless ``start`` is given.
    """
    model = model or ExactPosteriorDenoiser(system)
    setup = _tiny_setup(system)
    S, D, n = system.num_states, len(system.dims), system.n
    kmax = max(system.dims)
    if start is None:
        start = system.reference_distribution()
    state = rng.choice(S, size=num_samples, p=start / start.sum())
    comps = system.states[state]  # (N, D)
    tau = system.sched.T / steps
    for t in step_times(system.sched.T, steps):
        table = np.zeros((S, D, kmax))
        for s in range(S):
            g = system.state_graph(s)
            F, E = model.predict(g, float(t), system.sched.T)
            nr, er = reverse_rates(g, float(t), F, E, setup)
            table[s, :n, : nr.shape[1]] = nr
            table[s, n:, : er.shape[1]] = er
        idx = np.ravel_multi_index(comps.T, system.dims)
        rates = table[idx]  # (N, D, kmax)
        comps = leap_components(comps, rates, min(tau, float(t)), rng)
    idx = np.ravel_multi_index(comps.T, system.dims)
    return np.bincount(idx, minlength=S)


@dataclass
class ExactReverseResult:
    counts: np.ndarray
    bound_violations: int
    events: int

    @property
    def distribution(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def exact_reverse_tiny(system: TinySystem, num_samples: int, rng: np.random.Generator,
                       t_min: float = 1e-6, cells: int = 400,
                       points_per_cell: int = 8) -> ExactReverseResult:
    """Simulate the true time-reversed joint CTMC from ``q_T`` down to ``t_min``.

    Time-inhomogeneous exit rates are handled by thinning. The time axis is
    split into geometrically spaced cells (dense near 0, where rates into the
    data support grow like ``1/t``); in each cell the per-state bound is 1.5x
    the largest exit rate seen at a set of sample points. Any accepted
    proposal whose true rate exceeded the bound is counted in
    ``bound_violations``. Stopping at ``t_min`` instead of 0 leaves an
    ``O(t_min)`` discrepancy.
    """
    T = system.sched.T
    G = system.generator
    S = system.num_states
    edges = np.geomspace(t_min, T, cells + 1)

    def rate_rows(states, ts):
        qt = np.maximum(system.marginals_many(ts), 0.0)  # (N, S)
        qx = qt[np.arange(states.shape[0]), states]
        rows = qt * G[:, states].T  # (N, S): q(y) * R(y, x)
        rows[np.arange(states.shape[0]), states] = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            rows = np.where(qx[:, None] > 0, rows / qx[:, None], 0.0)
        return system.sched.beta(ts)[:, None] * rows

    qT = system.marginal(T)
    state = rng.choice(S, size=num_samples, p=qT / qT.sum())
    violations = 0
    events = 0
    all_states = np.arange(S)
    for k in range(len(edges) - 1, 0, -1):
        lo, hi = edges[k - 1], edges[k]
        probe = np.linspace(lo, hi, points_per_cell)
        bound = np.zeros(S)
        for tp in probe:
            rows = rate_rows(all_states, np.full(S, tp))
            bound = np.maximum(bound, rows.sum(axis=1))
        bound *= 1.5
        t = np.full(num_samples, hi)
        active = np.ones(num_samples, dtype=bool)
        while active.any():
            ids = np.flatnonzero(active)
            lam_max = bound[state[ids]]
            wait = np.full(ids.shape[0], np.inf)
            pos = lam_max > 0
            wait[pos] = rng.exponential(1.0 / lam_max[pos])
            t_new = t[ids] - wait
            done = t_new <= lo
            active[ids[done]] = False
            cand = ids[~done]
            if cand.size == 0:
                break
            t[cand] = t_new[~done]
            rows = rate_rows(state[cand], t[cand])
            lam = rows.sum(axis=1)
            violations += int((lam > bound[state[cand]] * (1 + 1e-12)).sum())
            accept = rng.random(cand.size) * bound[state[cand]] < lam
            if accept.any():
                acc = cand[accept]
                r = rows[accept]
                cdf = np.cumsum(r, axis=1)
                u = rng.random(acc.size)[:, None] * cdf[:, -1:]
                state[acc] = np.minimum((cdf < u).sum(axis=1), S - 1)
                events += int(acc.size)
    return ExactReverseResult(np.bincount(state, minlength=S), violations, events)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())
