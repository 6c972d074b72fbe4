"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op records its parents and a local gradient rule on the output tensor;
``backward`` materializes the tape (topological order over the forward graph)
and runs it once. Ops follow numpy broadcasting, with gradients summed back
to the parent shapes, and ``matmul`` follows ``np.matmul`` stacked-matrix
semantics so a whole batch can flow through one graph.

Any op producing NaN/Inf raises immediately; training treats that as
divergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Backward misuse: non-scalar loss or reuse of a consumed tape."""


def _checked(data: np.ndarray) -> np.ndarray:
    if not np.isfinite(data).all():
        raise NonFiniteError("operation produced non-finite values")
    return data


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _checked(np.asarray(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _result(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return _result(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _result(a.data * b.data, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    def grad_fn(g):
        return (g * c,)
    return _result(a.data * c, (a,), grad_fn)


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    def grad_fn(g):
        return (g,)
    return _result(a.data + c, (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with np.matmul stacked semantics (operands >= 2-d)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-d")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = _unbroadcast(g @ _swap(b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(a.data) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return _result(a.data @ b.data, (a, b), grad_fn)


def transpose_last2(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (_swap(g),)
    return _result(_swap(a.data), (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (g * (a.data > 0.0),)
    return _result(np.maximum(a.data, 0.0), (a,), grad_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)
    return _result(y, (a,), grad_fn)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance along the last axis, then affine."""
    if a.data.shape[-1] < 2:
        raise ValueError("layer_norm needs a normalized axis of length >= 2")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gain.data * xhat + bias.data

    def grad_fn(g):
        gx = None
        if a.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gbias = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        return gx, ggain, gbias
    return _result(y, (a, gain, bias), grad_fn)


def dropout(a: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return a
    if rng is None:
        raise ValueError("train-mode dropout needs an rng stream")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)

    def grad_fn(g):
        return (g * mask,)
    return _result(a.data * mask, (a,), grad_fn)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]

    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)
    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), grad_fn)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(piece if p.requires_grad else None
                     for piece, p in zip(pieces, parts))
    return _result(np.concatenate([p.data for p in parts], axis=axis),
                   tuple(parts), grad_fn)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[..., start:stop] = g
        return (ga,)
    return _result(a.data[..., start:stop].copy(), (a,), grad_fn)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray,
                         class_weights: np.ndarray | None = None) -> Tensor:
    """Class-weighted cross entropy from raw logits, averaged over rows.

    Weighted mean: sum_i w[y_i] * nll_i / sum_i w[y_i], so weights (1, 1)
    reduce exactly to the unweighted mean.
    """
    z = logits.data
    if z.ndim != 2:
        raise ValueError("logits must be [batch, n_classes]")
    labels = np.asarray(labels, dtype=int)
    n, n_classes = z.shape
    if labels.shape != (n,):
        raise ValueError("labels must be one per logit row")
    w = np.ones(n_classes) if class_weights is None else np.asarray(class_weights, float)
    wi = w[labels]
    wsum = wi.sum()

    zmax = z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    logp = z - logsum
    loss = float(-(wi * logp[np.arange(n), labels]).sum() / wsum)

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p * (wi / wsum)[:, None],)
    return _result(np.asarray(loss), (logits,), grad_fn)


# ---------------------------------------------------------------------------
# tape + backward

@dataclass
class Tape:
    """Topologically ordered op records of one forward graph; single use."""
    nodes: list[Tensor]
    consumed: bool = False

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        return cls(nodes=order)


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from ``loss``."""
    if loss.data.ndim != 0:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any requires_grad tensor")
    if loss._grad_fn is None and loss._parents == ():
        raise TapeError("tape already consumed; run a new forward pass")

    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents == ():
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        # release the record so the tape cannot be replayed
        node._parents = ()
        node._grad_fn = None
    tape.consumed = True


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, param in params.items():
        g = np.asarray(grads[name])
        if g.shape != param.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape "
                             f"{param.data.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        param.data = _checked(param.data - update)
