"""Small reverse-mode automatic differentiation over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its inputs and a rule
mapping the output gradient to input gradients. :func:`backward` orders the
recorded graph topologically (the tape) and runs the rules in reverse.
"""

from __future__ import annotations

import builtins
import math
from typing import Callable, Sequence

import numpy as np


class DomainError(ArithmeticError):
    """Input outside the domain of an op (e.g. log of a nonpositive value)."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_op",
                 "_consumed")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        # leaves that need gradients start at zero; intermediates allocate lazily
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        label = self.name or self._op
        return f"Tensor({label}, shape={self.value.shape})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value, parents: Sequence[Tensor], rule, op: str) -> Tensor:
    out = Tensor(value)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not conformable") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


broadcast_add = add


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _record(a.value * b.value, (a, b),
                   lambda g: (_unbroadcast(g * b.value, a.shape),
                              _unbroadcast(g * a.value, b.shape)), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(a.value * s, (a,), lambda g: (g * s,), "scale")


def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, m]``; ``b`` must be 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if b.value.ndim != 2 or a.value.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    k, m = b.shape

    def rule(g):
        ga = g @ b.value.T
        gb = a.value.reshape(-1, k).T @ g.reshape(-1, m)
        return ga, gb

    return _record(a.value @ b.value, (a, b), rule, "matmul")


# ---------------------------------------------------------------------------
# shape ops


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(value, tensors, rule, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),),
                   "transpose")


def take(a: Tensor, index, axis: int = 0) -> Tensor:
    """Gather entries along ``axis``; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)

    def rule(g):
        out = np.zeros_like(a.value)
        np.add.at(np.moveaxis(out, axis, 0), index, np.moveaxis(g, axis, 0))
        return (out,)

    return _record(np.take(a.value, index, axis=axis), (a,), rule, "take")


# ---------------------------------------------------------------------------
# reductions


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum; the full reduction is exactly rounded, hence independent of element order."""
    if axis is None:
        value = np.array(math.fsum(a.value.ravel()))
        if keepdims:
            value = value.reshape((1,) * a.value.ndim)
        return _record(value, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(value, (a,), rule, "sum")


def mean(a: Tensor, axis: int = 0, keepdims: bool = False) -> Tensor:
    n = a.shape[axis]
    value = a.value.mean(axis=axis, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _record(value, (a,), rule, "mean")


def std(a: Tensor, axis: int = 0, keepdims: bool = False, eps: float = 1e-8) -> Tensor:
    """Population standard deviation ``sqrt(mean((x - mean)^2) + eps)``."""
    n = a.shape[axis]
    centered = a.value - a.value.mean(axis=axis, keepdims=True)
    s = np.sqrt((centered ** 2).mean(axis=axis, keepdims=True) + eps)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * centered / (n * s),)

    value = s if keepdims else np.squeeze(s, axis=axis)
    return _record(value, (a,), rule, "std")


def normalize(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize along the last axis: ``(x - mean) / sqrt(var + eps)``."""
    h = a.shape[-1]
    centered = a.value - a.value.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def rule(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _record(xhat, (a,), rule, "normalize")


def _select_reduce(a: Tensor, axis: int, keepdims: bool, pick, op: str) -> Tensor:
    idx = pick(a.value, axis=axis)  # first occurrence on ties
    idx_k = np.expand_dims(idx, axis)
    value = np.take_along_axis(a.value, idx_k, axis=axis)
    if not keepdims:
        value = np.squeeze(value, axis=axis)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        out = np.zeros_like(a.value)
        np.put_along_axis(out, idx_k, g, axis=axis)
        return (out,)

    return _record(value, (a,), rule, op)


def min(a: Tensor, axis: int = 0, keepdims: bool = False) -> Tensor:  # noqa: A001
    return _select_reduce(a, axis, keepdims, np.argmin, "min")


def max(a: Tensor, axis: int = 0, keepdims: bool = False) -> Tensor:  # noqa: A001
    return _select_reduce(a, axis, keepdims, np.argmax, "max")


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    return _record(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log. With ``floor`` the input is clamped from below first."""
    x = a.value
    if floor is None:
        if (x <= 0).any():
            raise DomainError("log of a nonpositive value")
        return _record(np.log(x), (a,), lambda g: (g / x,), "log")
    keep = x > floor
    safe = np.where(keep, x, floor)
    return _record(np.log(safe), (a,), lambda g: (np.where(keep, g / safe, 0.0),), "log")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record(s, (a,), rule, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def rule(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), rule, "log_softmax")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record(a.value * mask, (a,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------

_OPS = {
    "add": add, "sub": sub, "mul": mul, "matmul": matmul, "concat": concat,
    "mean": mean, "std": std, "normalize": normalize, "min": min, "max": max, "sum": sum,
    "relu": relu, "sigmoid": sigmoid, "log": log, "exp": exp, "softmax": softmax,
    "log_softmax": log_softmax, "dropout": dropout, "broadcast_add": broadcast_add,
    "scale": scale, "reshape": reshape, "transpose": transpose, "take": take,
}


def apply(op_name: str, *inputs, **attrs) -> Tensor:
    """Dispatch an op by name (``concat`` takes the tensor list as its single input)."""
    try:
        fn = _OPS[op_name]
    except KeyError:
        raise ValueError(f"unknown op {op_name!r}") from None
    return fn(*inputs, **attrs)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into every reachable leaf's ``grad``."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this loss; rebuild the graph first")
    loss._consumed = True
    tape = _topological(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.requires_grad:
                parent.grad = g if parent.grad is None else parent.grad + g
        if node is not loss:
            node.grad = None  # free the intermediate


# relative 2-point vs 4-point disagreement treated as a stencil crossing a kink
KINK_TOL = 1e-3


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               stencil: int = 2, kink_retries: int = 0) -> float:
    """Max relative error ``|an - fd| / (|an| + |fd| + 1e-8)`` over checked entries.

    ``fd`` is a central difference with 2 or 4 evaluation points (``stencil``);
    the 4-point rule has O(h^4) truncation error, so it tolerates a larger ``h``
    and hence less cancellation noise. ``f`` must rebuild its graph on every
    call and be deterministic. With ``max_entries`` a uniform random subset of
    entries per parameter is checked.

    Piecewise-linear ops (relu, max) make ``f`` non-differentiable on a measure
    zero set, and a stencil that straddles such a kink gives a meaningless
    ``fd``. With ``stencil=4`` and ``kink_retries > 0``, an entry whose 4-point
    and inner 2-point estimates disagree by more than ``KINK_TOL`` (relative) is
    re-estimated with ``h / 10``, at most ``kink_retries`` times. The retry
    never looks at the analytic gradient, so a wrong backward pass still fails.
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    if kink_retries and stencil != 4:
        raise ValueError("kink_retries needs stencil=4")
    for p in params:
        p.zero_grad()
    backward(f())

    def at(flat, k, x):
        flat[k] = x
        return float(f().value)

    worst = 0.0
    for p in params:
        analytic = p.grad.copy().reshape(-1)
        flat = p.value.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for k in entries:
            old = flat[k]
            step = h
            for attempt in range(kink_retries + 1):
                inner = at(flat, k, old + step) - at(flat, k, old - step)
                if stencil == 2:
                    fd = inner / (2 * step)
                    break
                outer = at(flat, k, old + 2 * step) - at(flat, k, old - 2 * step)
                fd = (8 * inner - outer) / (12 * step)
                central = inner / (2 * step)
                if abs(fd - central) <= KINK_TOL * (abs(fd) + abs(central) + 1e-8):
                    break
                step /= 10
            flat[k] = old
            an = analytic[k]
            worst = builtins.max(worst, abs(an - fd) / (abs(an) + abs(fd) + 1e-8))
    return worst
