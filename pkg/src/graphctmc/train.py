"""Denoiser training: corruption, cross-entropy to the clean graph, Adam updates, checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import CategoricalGraph, SizeDistribution
from .model import DenoiserModel, ModelConfig
from .noise import DiffusionSetup, corrupt_graph

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"GCTMCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.0
    batch_size: int = 8
    epochs: int = 100
    seed: int = 0
    clip_norm: float = 10.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


def ce_loss(g0: CategoricalGraph, F_hat: Tensor, E_hat: Tensor) -> Tensor:
    """Sum of node CE plus CE over unordered pairs ``i < j``, natural log."""
    n = g0.n
    if F_hat.shape[0] != n or F_hat.value.ndim != 2:
        raise ValueError(f"ce_loss: node predictions {F_hat.shape} do not match n={n}")
    if E_hat.shape[:2] != (n, n) or E_hat.value.ndim != 3:
        raise ValueError(f"ce_loss: edge predictions {E_hat.shape} do not match n={n}")
    b, c = F_hat.shape[1], E_hat.shape[2]
    node_idx = np.arange(n) * b + g0.node_types
    picked = [ad.take(ad.reshape(F_hat, (n * b,)), node_idx)]
    if n > 1:
        iu, ju = g0.upper_pairs()
        edge_idx = (iu * n + ju) * c + g0.edge_types[iu, ju]
        picked.append(ad.take(ad.reshape(E_hat, (n * n * c,)), edge_idx))
    logp = ad.log(ad.concat(picked, axis=0), floor=PROB_FLOOR)
    return ad.scale(ad.sum(logp), -1.0)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_update(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
                     lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
                     beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam step with decoupled weight decay applied first."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if weight_decay:
            p.value *= 1.0 - lr * weight_decay
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and total > max_norm:
        for g in grads.values():
            g *= max_norm / total
    return total


# ---------------------------------------------------------------------------
# training


def graph_loss(model: DenoiserModel, g0: CategoricalGraph, setup: DiffusionSetup,
               rng: np.random.Generator, train: bool = True) -> Tensor:
    """Sample ``t ~ U(0, T)``, corrupt ``g0`` and score the prediction (one term of the objective)."""
    T = setup.sched.T
    t = float(rng.uniform(0.0, T))
    g_t = corrupt_graph(g0, t, setup.node_spec, setup.edge_spec, setup.sched, rng)
    F_hat, E_hat = model.forward(g_t, t, T, train=train, rng=rng)
    return ce_loss(g0, F_hat, E_hat)


def train_step(model: DenoiserModel, batch: Sequence[CategoricalGraph], cfg: TrainConfig,
               setup: DiffusionSetup, rng: np.random.Generator, state: AdamState) -> float:
    """One optimizer step on the batch-mean of per-graph losses; returns that mean."""
    if len(batch) == 0:
        raise ValueError("train_step needs a nonempty batch")
    model.zero_grad()
    streams = rng.spawn(len(batch))
    total = 0.0
    for g0, child in zip(batch, streams):
        loss = graph_loss(model, g0, setup, child)
        total += float(loss.value)
        ad.backward(ad.scale(loss, 1.0 / len(batch)))
    grads = {name: p.grad for name, p in model.params.items()}
    clip_grads(grads, cfg.clip_norm)
    optimizer_update(model.params, grads, state, cfg.learning_rate, cfg.weight_decay)
    return total / len(batch)


def train(model: DenoiserModel, graphs: Sequence[CategoricalGraph], cfg: TrainConfig,
          setup: DiffusionSetup, state: AdamState | None = None,
          on_step: Callable[[int, int, float], None] | None = None,
          max_steps: int | None = None) -> AdamState:
    """Epoch loop over seed-shuffled minibatches. ``on_step(step, epoch, loss)`` sees every step."""
    if len(graphs) == 0:
        raise ValueError("no training graphs")
    state = state or AdamState()
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(graphs))
        for start in range(0, len(order), cfg.batch_size):
            batch = [graphs[k] for k in order[start:start + cfg.batch_size]]
            loss = train_step(model, batch, cfg, setup, rng, state)
            if on_step is not None:
                on_step(state.step, epoch, loss)
            if max_steps is not None and state.step >= max_steps:
                return state
        log.debug("epoch %d done (step %d)", epoch, state.step)
    return state


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: DenoiserModel
    setup: DiffusionSetup
    train_config: TrainConfig
    sizes: SizeDistribution
    step: int = 0
    marginals: tuple[np.ndarray, np.ndarray] | None = None  # node/edge type frequencies


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Magic, u32 header length, JSON header, float64 payload, sha256 of all preceding bytes."""
    arrays, offset, chunks = [], 0, []
    for name in sorted(ckpt.model.params):
        value = np.ascontiguousarray(ckpt.model.params[name].value, dtype="<f8")
        arrays.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(value.tobytes())
        offset += value.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": ckpt.model.config.to_dict(),
        "train_config": asdict(ckpt.train_config),
        "diffusion": ckpt.setup.to_dict(),
        "size_distribution": ckpt.sizes.to_dict(),
        "step": int(ckpt.step),
        "marginals": None if ckpt.marginals is None else {
            "node": [float(x) for x in ckpt.marginals[0]],
            "edge": [float(x) for x in ckpt.marginals[1]]},
        "arrays": arrays,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 + 32 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted or truncated)")
    pos = len(CHECKPOINT_MAGIC)
    (head_len,) = struct.unpack("<I", body[pos:pos + 4])
    pos += 4
    try:
        header = json.loads(body[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')} != {CHECKPOINT_VERSION}")
    payload = body[pos + head_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header says "
                              f"{header['payload_bytes']}")
    params = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"]))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        params[entry["name"]] = ad.parameter(arr.reshape(entry["shape"]).astype(np.float64),
                                             entry["name"])
    config = ModelConfig(**header["model_config"])
    model = DenoiserModel(config, params=params)
    expected = set(DenoiserModel(config, seed=0).params)
    if set(params) != expected:
        raise CheckpointError(f"{path}: parameter names do not match the model config")
    marg = header.get("marginals")
    if marg is not None:
        marg = (np.array(marg["node"]), np.array(marg["edge"]))
    return Checkpoint(model, DiffusionSetup.from_dict(header["diffusion"]),
                      TrainConfig(**header["train_config"]),
                      SizeDistribution.from_dict(header["size_distribution"]), header["step"], marg)


def checkpoint_roundtrip(ckpt: Checkpoint, path) -> Checkpoint:
    save_checkpoint(ckpt, path)
    return load_checkpoint(path)
