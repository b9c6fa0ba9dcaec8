"""Dense double-precision tensors with reverse-mode automatic differentiation.

The op set is the minimal closure over what the encoder/decoder model needs:
matmul, elementwise add/sub/mul, bias broadcast over the last dimension,
scalar scaling, softmax, layer norm, embedding lookup, concat, reshape,
transpose, masked fill, relu, dropout and token cross-entropy. The tape is
define-by-run: every op that touches a grad-requiring tensor records a
backward closure, and ``backward()`` replays them in reverse topological
order. Construction and backward are single-threaded per graph.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class _TapeState(threading.local):
    """Per-thread tape switches, so concurrent read-only inference in one
    thread cannot disable gradient recording for training in another.

    grad_enabled gates tape construction (no_grad); read_trace, when set,
    collects the labels of every labelled tensor an op consumes (used to
    audit which parameter bank a forward pass actually read).
    """

    def __init__(self):
        self.grad_enabled: bool = True
        self.read_trace: set[str] | None = None


_STATE = _TapeState()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape construction inside the block (pure numpy forward)."""
    prev = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


@contextmanager
def trace_parameter_reads() -> Iterator[set[str]]:
    """Collect the labels of all labelled tensors read by ops in the block."""
    prev = _STATE.read_trace
    _STATE.read_trace = set()
    try:
        yield _STATE.read_trace
    finally:
        _STATE.read_trace = prev


class Tensor:
    """A dense float64 array plus optional gradient accumulator and tape node."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "label")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.label: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf.

        Leaf grads persist and accumulate additively across calls; grads of
        intermediate nodes are transient buffers freed during the sweep.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar tensor, got shape {self.shape}"
            )
        order = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; module-level functions hold the real implementations.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return scale(tensor_sum(self), 1.0 / self.size)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative DFS post-order; recursion would overflow on long decode graphs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward: Callable[[np.ndarray], None],
) -> Tensor:
    if _STATE.read_trace is not None:
        for p in parents:
            if p.label is not None:
                _STATE.read_trace.add(p.label)
    out = Tensor(data)
    if _STATE.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast_bias(g: np.ndarray, bias_shape: tuple[int, ...]) -> np.ndarray:
    # bias is 1-D over the last axis; sum the gradient over all leading axes
    return g.reshape(-1, bias_shape[0]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; the only permitted broadcast is a 1-D bias over the last dim."""
    if a.shape == b.shape:
        def back(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        return _make(a.data + b.data, (a, b), back)
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def back_bias(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(_unbroadcast_bias(g, b.shape))
        return _make(a.data + b.data, (a, b), back_bias)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(a.data * s, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; operands must be 2-D, or stacked with identical leading dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(np.matmul(a.data, b.data), (a, b), back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    new = a.data.reshape(shape)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(new, (a,), back)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def tensor_sum(a: Tensor) -> Tensor:
    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(a.data.sum()), (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(np.maximum(a.data, 0.0), (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - inner))

    return _make(y, (a,), back)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with ``value``; mask may broadcast."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, value, a.data)
    if out.shape != a.shape:
        raise ShapeError(f"masked_fill: mask {mask.shape} does not broadcast to {a.shape}")

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.where(mask, 0.0, g))

    return _make(out, (a,), back)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from ``weight``; backward scatter-adds into the gathered rows."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(
            f"embedding: id out of range [0, {weight.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )

    def back(g: np.ndarray) -> None:
        if weight.requires_grad:
            buf = np.zeros_like(weight.data)
            np.add.at(buf, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
            weight._accumulate(buf)

    return _make(weight.data[ids], (weight,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-position normalization over the last dim: gamma * (x-mu)/sqrt(var+eps) - beta.

    Note the subtracted shift; beta is zero-initialized so the convention is
    expressively equivalent to the usual added one.
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: parameters {gamma.shape}/{beta.shape} do not match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(-g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            term = gx - gx.mean(axis=-1, keepdims=True)
            term -= xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return _make(gamma.data * xhat - beta.data, (x, gamma, beta), back)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or no generator is supplied."""
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * keep)

    return _make(x.data * keep, (x,), back)


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, ignore_index: int = -1
) -> Tensor:
    """Mean negative log-probability over positions whose target != ignore_index.

    ``logits`` is (positions, vocab); stabilized by max subtraction.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    targets = np.asarray(targets)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: targets {targets.shape} do not match logits rows {logits.shape[0]}"
        )
    vocab = logits.shape[1]
    valid = targets != ignore_index
    bad = valid & ((targets < 0) | (targets >= vocab))
    if bad.any():
        pos = int(np.argmax(bad))
        raise IndexError(
            f"cross_entropy: target {int(targets[pos])} at position {pos} "
            f"outside [0, {vocab})"
        )
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: no non-ignored targets")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.nonzero(valid)[0]
    loss = -logp[rows, targets[rows]].sum() / n_valid

    def back(g: np.ndarray) -> None:
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[rows, targets[rows]] -= 1.0
            grad[~valid] = 0.0
            logits._accumulate(grad * (float(g) / n_valid))

    return _make(np.asarray(loss), (logits,), back)


class Parameter:
    """A named, trainable tensor carrying its sharing classification."""

    SHARED = "shared"
    COMPLEXITY_DEPENDENT = "complexity_dependent"

    def __init__(self, data: np.ndarray, name: str, sharing_tag: str):
        if sharing_tag not in (self.SHARED, self.COMPLEXITY_DEPENDENT):
            raise ValueError(f"unknown sharing_tag {sharing_tag!r}")
        self.tensor = Tensor(data, requires_grad=True)
        self.tensor.label = name
        self.name = name
        self.sharing_tag = sharing_tag

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, tag={self.sharing_tag})"
