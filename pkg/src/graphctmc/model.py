"""Message-passing denoiser mapping a noisy graph to clean-graph type probabilities.

Node embeddings are ``(n, h)``, edge embeddings ``(n, n, h)`` and the global
embedding ``(h,)``. Edge embeddings are kept symmetric with a zero diagonal:
after every edge update the upper triangle is mirrored onto the lower one.
Each sub-update ends in a per-element layer norm; without it the FiLM products
compound across layers and the readout saturates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import GLOBAL_AUX_DIM, NODE_AUX_DIM, compute_aux
from .graph import CategoricalGraph


@dataclass(frozen=True)
class ModelConfig:
    num_node_types: int
    num_edge_types: int
    hidden: int = 64
    layers: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.num_node_types < 1 or self.num_edge_types < 2:
            raise ValueError("need at least one node type and two edge types")
        if self.hidden < 1 or self.layers < 0:
            raise ValueError("hidden must be positive and layers nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Context:
    """Per-call settings threaded through the forward pass."""

    train: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = None


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_linear(params: dict, name: str, fan_in: int, fan_out: int, rng) -> None:
    params[f"{name}.W"] = ad.parameter(_glorot(rng, fan_in, fan_out), f"{name}.W")
    params[f"{name}.b"] = ad.parameter(np.zeros(fan_out), f"{name}.b")


def init_mlp(params: dict, name: str, dims: list[int], rng) -> None:
    for k in range(len(dims) - 1):
        init_linear(params, f"{name}.{k}", dims[k], dims[k + 1], rng)


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    return ad.matmul(x, params[f"{name}.W"]) + params[f"{name}.b"]


def mlp(params: dict, name: str, x: Tensor, ctx: Context) -> Tensor:
    k = 0
    while f"{name}.{k + 1}.W" in params:
        x = ad.relu(linear(params, f"{name}.{k}", x))
        x = ad.dropout(x, ctx.dropout, ctx.rng, ctx.train)
        k += 1
    return linear(params, f"{name}.{k}", x)


def film(params: dict, name: str, x: Tensor, y: Tensor) -> Tensor:
    """``Lin1(x) + Lin2(x) * y + y`` with ``y`` broadcast over the leading axes of ``x``."""
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"film: width mismatch {x.shape[-1]} vs {y.shape[-1]}")
    return linear(params, f"{name}.lin1", x) + linear(params, f"{name}.lin2", x) * y + y


def init_film(params: dict, name: str, h: int, rng) -> None:
    init_linear(params, f"{name}.lin1", h, h, rng)
    init_linear(params, f"{name}.lin2", h, h, rng)


def layer_norm(params: dict, name: str, x: Tensor) -> Tensor:
    return ad.normalize(x) * params[f"{name}.gain"] + params[f"{name}.bias"]


def init_layer_norm(params: dict, name: str, h: int) -> None:
    params[f"{name}.gain"] = ad.parameter(np.ones(h), f"{name}.gain")
    params[f"{name}.bias"] = ad.parameter(np.zeros(h), f"{name}.bias")


def pna(params: dict, name: str, items: Tensor, ctx: Context) -> Tensor:
    """MLP over coordinate-wise min, max, mean and std of the rows of ``items``."""
    if items.shape[0] == 0:
        raise ValueError("pna: empty set")
    pooled = ad.concat([ad.min(items, axis=0), ad.max(items, axis=0),
                        ad.mean(items, axis=0), ad.std(items, axis=0)], axis=-1)
    return mlp(params, name, pooled, ctx)


def _symmetric_offdiag(E: Tensor, upper_mask: np.ndarray) -> Tensor:
    """Keep the strict upper triangle and mirror it; the diagonal becomes zero."""
    U = E * upper_mask
    return U + ad.transpose(U, (1, 0, 2))


def mpnn_layer(params: dict, name: str, F: Tensor, E: Tensor, y: Tensor,
               ctx: Context | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """One layer: nodes from incoming edges, then edges from updated nodes, then global."""
    ctx = ctx or Context()
    n, h = F.shape
    if not np.array_equal(E.value, np.transpose(E.value, (1, 0, 2))):
        raise ValueError("mpnn_layer: edge embeddings must be symmetric")
    upper = np.triu(np.ones((n, n)), k=1)[:, :, None]

    # edges carry a zero diagonal, so this is the mean over the n-1 other nodes
    incoming = ad.scale(ad.sum(E, axis=0), 1.0 / max(n - 1, 1))
    F = film(params, f"{name}.node_film1", F, mlp(params, f"{name}.node_mlp", incoming, ctx))
    F = layer_norm(params, f"{name}.node_norm", film(params, f"{name}.node_film2", F, y))

    pair = ad.reshape(F, (n, 1, h)) * ad.reshape(F, (1, n, h))
    E = film(params, f"{name}.edge_film1", E, pair)
    E = layer_norm(params, f"{name}.edge_norm", film(params, f"{name}.edge_film2", E, y))
    E = _symmetric_offdiag(E, upper)

    if n > 1:
        iu, ju = np.triu_indices(n, k=1)
        edge_set = ad.take(ad.reshape(E, (n * n, h)), iu * n + ju, axis=0)
    else:
        edge_set = Tensor(np.zeros((1, h)))
    y = y + pna(params, f"{name}.node_pna", F, ctx) + pna(params, f"{name}.edge_pna", edge_set, ctx)
    y = layer_norm(params, f"{name}.global_norm", y)
    return F, E, y


def init_mpnn_layer(params: dict, name: str, h: int, rng) -> None:
    init_mlp(params, f"{name}.node_mlp", [h, h, h], rng)
    for f in ("node_film1", "node_film2", "edge_film1", "edge_film2"):
        init_film(params, f"{name}.{f}", h, rng)
    init_mlp(params, f"{name}.node_pna", [4 * h, h, h], rng)
    init_mlp(params, f"{name}.edge_pna", [4 * h, h, h], rng)
    for norm in ("node_norm", "edge_norm", "global_norm"):
        init_layer_norm(params, f"{name}.{norm}", h)


def featurize(g: CategoricalGraph, t: float, T: float, num_node_types: int, num_edge_types: int):
    """One-hot types plus log-compressed structural features."""
    aux = compute_aux(g, t, T)
    node_x = np.concatenate([np.eye(num_node_types)[g.node_types], np.log1p(aux.node_aux)], axis=1)
    edge_x = np.eye(num_edge_types)[g.edge_types]
    glob = aux.global_aux.copy()
    glob[:-1] = np.log1p(glob[:-1])
    return node_x, edge_x, glob


class DenoiserModel:
    def __init__(self, config: ModelConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        if params is None:
            params = {}
            rng = np.random.default_rng(seed)
            b, c, h = config.num_node_types, config.num_edge_types, config.hidden
            init_mlp(params, "in_node", [b + NODE_AUX_DIM, h, h], rng)
            init_mlp(params, "in_edge", [c, h, h], rng)
            init_mlp(params, "in_global", [GLOBAL_AUX_DIM, h, h], rng)
            for layer in range(config.layers):
                init_mpnn_layer(params, f"layer{layer}", h, rng)
            init_mlp(params, "out_node", [h, h, b], rng)
            init_mlp(params, "out_edge", [h, h, c], rng)
        self.params = params

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, g: CategoricalGraph, t: float, T: float = 1.0, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Return ``(F_hat, E_hat)`` probability tensors of shapes ``(n, b)``, ``(n, n, a+1)``."""
        if not 0.0 <= t <= T:
            raise ValueError(f"t={t} outside [0, {T}]")
        cfg = self.config
        ctx = Context(train=train, dropout=cfg.dropout if train else 0.0, rng=rng)
        p = self.params
        n = g.n
        node_x, edge_x, glob = featurize(g, t, T, cfg.num_node_types, cfg.num_edge_types)
        upper = np.triu(np.ones((n, n)), k=1)[:, :, None]

        F = mlp(p, "in_node", Tensor(node_x), ctx)
        E = _symmetric_offdiag(mlp(p, "in_edge", Tensor(edge_x), ctx), upper)
        y = mlp(p, "in_global", Tensor(glob), ctx)
        for layer in range(cfg.layers):
            F, E, y = mpnn_layer(p, f"layer{layer}", F, E, y, ctx)

        node_logits = mlp(p, "out_node", F, ctx)
        edge_logits = mlp(p, "out_edge", E, ctx)
        edge_logits = ad.scale(edge_logits + ad.transpose(edge_logits, (1, 0, 2)), 0.5)
        return ad.softmax(node_logits, axis=-1), ad.softmax(edge_logits, axis=-1)

    def predict(self, g: CategoricalGraph, t: float, T: float = 1.0):
        """Inference-mode probabilities as plain arrays."""
        F_hat, E_hat = self.forward(g, t, T)
        return F_hat.value, E_hat.value


def predict_clean(model: DenoiserModel, g_t: CategoricalGraph, t: float, T: float = 1.0):
    return model.forward(g_t, t, T)
