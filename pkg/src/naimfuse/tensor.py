"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable op records its parents and a closure mapping the
upstream gradient to one gradient per parent. ``backward`` walks the graph
once in reverse topological order and accumulates into leaf ``.grad``
buffers, so calling it twice without ``zero_grad`` adds the gradients.
"""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NEG_INF = -np.inf
PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class GradientError(RuntimeError):
    """Backward was called on something that is not a scalar loss."""


def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64, copy=True, ndmin=0)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(_as_array(data), requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_as_array(x))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class ComputationGraph:
    """Reverse topological ordering of every node reachable from an output."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS; recursion depth would scale with layer count
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes.reverse()
        self.index = {id(n): i for i, n in enumerate(self.nodes)}

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def run(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(self.output): seed}
        for node in self.nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def backward(loss: Tensor) -> ComputationGraph:
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = ComputationGraph(loss)
    if loss.requires_grad:
        graph.run(np.ones_like(loss.data))
    return graph


# elementwise arithmetic -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), grad_fn)


def neg(a) -> Tensor:
    a = _lift(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def grad_fn(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data / b.data, (a, b), grad_fn)


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    return _node(a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = _lift(a)
    active = a.data > 0
    return _node(np.where(active, a.data, 0.0), (a,), lambda g: (np.where(active, g, 0.0),))


def where(condition: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``condition`` holds, else ``b``.

    Unlike multiplying by a 0/1 mask, the unselected side is never touched,
    so NaN placeholders in it cannot leak into the result or the gradient.
    """
    a, b = _lift(a), _lift(b)
    cond = np.asarray(condition, dtype=bool)

    def grad_fn(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _node(np.where(cond, a.data, b.data), (a, b), grad_fn)


# reductions and shape ---------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(tsum(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = _lift(a)
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, axes)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_lift(t) for t in tensors)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _node(np.stack([p.data for p in parts], axis=axis), parts, grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(_lift(t) for t in tensors)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, grad_fn)


# linear algebra ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # batched rows times one weight matrix: flatten to a single GEMM
        k, n = b.shape
        flat = a.data.reshape(-1, k)

        def flat_grad(g):
            g2 = g.reshape(-1, n)
            return (g2 @ b.data.T).reshape(a.shape), flat.T @ g2

        return _node((flat @ b.data).reshape(*a.shape[:-1], n), (a, b), flat_grad)

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), grad_fn)


def embedding(table: Tensor, indices: np.ndarray, present: np.ndarray) -> Tensor:
    """Row lookup ``table[indices]`` with absent positions yielding the zero row.

    Absent positions read nothing from ``table`` (their index is ignored) and
    send no gradient to it, which is how a fixed all-zero padding row behaves.
    """
    present = np.asarray(present, dtype=bool)
    safe = np.where(present, indices, 0).astype(np.intp)
    n_rows = table.shape[0]
    if np.any(present & ((safe < 0) | (safe >= n_rows))):
        bad = safe[present & ((safe < 0) | (safe >= n_rows))]
        raise IndexError(f"embedding index {int(bad[0])} outside table of {n_rows} rows")
    out = np.where(present[..., None], table.data[safe], 0.0)

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, safe[present], g[present])
        return (gt,)

    return _node(out, (table,), grad_fn)


# attention and classification primitives --------------------------------------

def masked_softmax(scores, mask) -> Tensor:
    """Row softmax of ``scores + mask`` over the last axis.

    ``mask`` holds 0 or -inf. Masked positions come out exactly 0 and a row
    whose every entry is masked comes out as the zero row instead of NaN.
    """
    scores = _lift(scores)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if scores.ndim < 2 or scores.shape[-1] != scores.shape[-2]:
        raise ShapeError(f"masked_softmax expects square score matrices, got {scores.shape}")
    blocked = np.broadcast_to(np.isneginf(m), scores.shape)
    if np.any((m != 0) & ~np.isneginf(m)):
        raise ValueError("mask entries must be 0 or -inf")
    live = np.where(blocked, -np.inf, scores.data)
    row_max = np.max(live, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(blocked, 0.0, np.exp(np.where(blocked, 0.0, scores.data - row_max)))
    total = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    def grad_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (scores,), grad_fn)


def softmax(logits) -> Tensor:
    logits = _lift(logits)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (logits,), grad_fn)


def _labels_index(labels, n: int) -> np.ndarray:
    idx = np.asarray(labels).astype(np.intp).reshape(-1)
    if idx.shape[0] != n:
        raise ShapeError(f"{idx.shape[0]} labels for {n} rows")
    return idx


def cross_entropy(probabilities, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    Probabilities at or below 1e-12 are clamped before the log and logged as a
    diagnostic; the clamped entries pass no gradient.
    """
    probs = _lift(probabilities)
    n = probs.shape[0]
    idx = _labels_index(labels, n)
    picked = probs.data[np.arange(n), idx]
    clamped = picked <= PROB_FLOOR
    if np.any(clamped):
        logger.warning("cross_entropy: %d true-class probabilities clamped at %g",
                       int(clamped.sum()), PROB_FLOOR)
    safe = np.where(clamped, PROB_FLOOR, picked)

    def grad_fn(g):
        gp = np.zeros_like(probs.data)
        gp[np.arange(n), idx] = np.where(clamped, 0.0, -g / (n * safe))
        return (gp,)

    return _node(np.array(-np.log(safe).mean()), (probs,), grad_fn)


def cross_entropy_with_logits(logits, labels) -> Tensor:
    """Fused softmax + cross-entropy; gradient is ``(softmax - onehot) / n``."""
    logits = _lift(logits)
    n = logits.shape[0]
    idx = _labels_index(labels, n)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), idx].mean()

    def grad_fn(g):
        gl = np.exp(log_probs)
        gl[np.arange(n), idx] -= 1.0
        return (gl * (g / n),)

    return _node(np.array(loss), (logits,), grad_fn)


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = _lift(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def grad_fn(g):
        gx_hat = g * gain.data
        gx = inv_std * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _node(xhat * gain.data + bias.data, (x, gain, bias), grad_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape) >= rate
    return mul(x, keep / (1.0 - rate))
