"""Structural node and graph features computed on the (noisy) input graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import CategoricalGraph

NUM_EIGENVALUES = 5
NODE_AUX_DIM = 4  # 3-, 4-, 5-cycles per node, in-largest-component flag
GLOBAL_AUX_DIM = 4 + 1 + NUM_EIGENVALUES + 1  # cycle totals, components, eigenvalues, t/T


@dataclass
class AuxFeatures:
    node_aux: np.ndarray
    global_aux: np.ndarray

    @property
    def node_cycles(self) -> np.ndarray:
        return self.node_aux[:, :3]

    @property
    def cycle_totals(self) -> np.ndarray:
        return self.global_aux[:4]

    @property
    def num_components(self) -> int:
        return int(self.global_aux[4])

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.global_aux[5:5 + NUM_EIGENVALUES]


def cycle_counts(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simple-cycle counts from closed walks.

    Returns per-node counts of 3-, 4- and 5-cycles through each node, shape
    ``(n, 3)``, and total counts of 3-, 4-, 5- and 6-cycles. Walk counts on a
    0/1 matrix are small integers, so float arithmetic here is exact.
    """
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    A2 = A @ A
    A3 = A2 @ A
    A4 = A3 @ A
    A5 = A4 @ A
    A6 = A5 @ A
    dA3 = np.diagonal(A3)
    c3 = dA3 / 2.0
    c4 = (np.diagonal(A4) - d * (d - 1.0) - A @ d) / 2.0
    # closed 5-walks that are not cycles all wrap a triangle plus one backtrack
    c5 = (np.diagonal(A5) - 2.0 * dA3 * d - A @ dA3 + 5.0 * dA3 - 2.0 * (A * A2) @ d) / 2.0
    d2 = np.diagonal(A2)
    dA4 = np.diagonal(A4)
    six = (
        np.trace(A6)
        - 3.0 * np.sum(dA3 ** 2)
        + 9.0 * np.sum(A * A2 ** 2)
        - 6.0 * np.sum(d2 * dA4)
        + 6.0 * np.trace(A4)
        - 4.0 * np.trace(A3)
        + 4.0 * np.sum(d2 ** 3)
        + 3.0 * np.sum(A3)
        - 12.0 * np.sum(d2 ** 2)
        + 4.0 * np.trace(A2)
    ) / 12.0
    totals = np.array([c3.sum() / 3.0, c4.sum() / 4.0, c5.sum() / 5.0, six])
    return np.stack([c3, c4, c5], axis=1), totals


def laplacian_spectrum(A: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of the combinatorial Laplacian ``D - A``."""
    L = np.diag(A.sum(axis=1)) - A
    return np.linalg.eigvalsh(L)


def component_info(A: np.ndarray) -> tuple[int, np.ndarray]:
    """Number of components and a 0/1 flag for nodes in a largest component.

    Every component of maximal size is flagged, which keeps the flag
    permutation-equivariant when there are ties.
    """
    k, labels = connected_components(A, directed=False)
    sizes = np.bincount(labels, minlength=k)
    return int(k), (sizes[labels] == sizes.max()).astype(np.float64)


def compute_aux(g: CategoricalGraph, t: float, T: float = 1.0) -> AuxFeatures:
    A = g.adjacency
    node_cycles, totals = cycle_counts(A)
    k, in_lcc = component_info(A)
    eig = laplacian_spectrum(A)
    # the k smallest eigenvalues are the zero eigenvalues of the k components
    nonzero = eig[k:k + NUM_EIGENVALUES]
    eig_feat = np.zeros(NUM_EIGENVALUES)
    eig_feat[: nonzero.shape[0]] = nonzero
    node_aux = np.concatenate([node_cycles, in_lcc[:, None]], axis=1)
    global_aux = np.concatenate([totals, [float(k)], eig_feat, [t / T]])
    return AuxFeatures(node_aux, global_aux)
