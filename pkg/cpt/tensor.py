#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a closure mapping the output
gradient to one gradient per parent. ``backward`` visits the reachable nodes
in descending ``tape_id`` order; ids come from a global counter, so a node is
always visited after everything that consumed it.
"""

from __future__ import annotations

import contextlib
import itertools
import logging
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from cpt.exceptions import IndexLookupError, NumericError, ShapeError

log = logging.getLogger("cpt")

_tape_ids = itertools.count(1)


class _GradMode(threading.local):
    enabled = True


_grad_mode = _GradMode()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block, for the calling thread only."""
    previous = _grad_mode.enabled
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def is_grad_enabled() -> bool:
    return _grad_mode.enabled


class Tensor:
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.tape_id = next(_tape_ids)
        self.degenerate = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @classmethod
    def parameter(cls, values, name: str | None = None) -> Tensor:
        t = cls(values, requires_grad=True, name=name)
        t.grad = np.zeros_like(t.values)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape) -> Tensor:
        return reshape(self, shape)

    def transpose(self, axes) -> Tensor:
        return transpose(self, axes)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log_(self)

    def backward(self):
        backward(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(values, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(values)
    if _grad_mode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} invalid for a {ndim}-d tensor")
    return axis % ndim


############### elementwise ###############


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.values + b.values, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.values - b.values, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _result(a.values * b.values, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        )

    return _result(a.values / b.values, (a, b), grad_fn)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,))


def log_(a: Tensor) -> Tensor:
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU"""
    x = a.values
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result(out, (a,), grad_fn)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.values * keep, (a,), lambda g: (g * keep,))


############### structural ###############


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.values @ b.values, (a, b), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),))


def take(a: Tensor, key) -> Tensor:
    """Basic or advanced indexing; the backward scatter-adds repeated indices."""
    if isinstance(key, Tensor):
        raise ShapeError("index with integer arrays, not tensors")

    def grad_fn(g):
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        return (full,)

    return _result(a.values[key], (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = _normalize_axis(axis, tensors[0].ndim)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.values for t in tensors], axis=axis), tensors, grad_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.values.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


############### normalisation & losses ###############


def _check_finite(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericError(f"{what} received {bad} non-finite value(s)")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _normalize_axis(axis, x.ndim)
    _check_finite(x.values, "softmax")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _normalize_axis(axis, x.ndim)
    _check_finite(x.values, "log_softmax")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last dim, then scale by ``gain`` and shift by ``bias``."""
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.values + bias.values

    def grad_fn(g):
        dxhat = g * gain.values
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _result(out, (x, gain, bias), grad_fn)


def cross_entropy(
    logits: Tensor,
    targets,
    ignore_index: int | None = None,
    reduction: str = "mean",
) -> Tensor:
    """
    Negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` is (..., V); ``targets`` has the leading shape. Positions equal
    to ``ignore_index`` (default V, one past the largest id) contribute
    nothing. With every position ignored the loss is 0 and ``degenerate`` is set.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    ignore = vocab if ignore_index is None else ignore_index
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    flat_logits = logits.values.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    valid = flat_targets != ignore
    bad = valid & ((flat_targets < 0) | (flat_targets >= vocab))
    if bad.any():
        raise IndexLookupError("target", int(flat_targets[bad][0]), vocab)
    _check_finite(flat_logits, "cross_entropy")
    count = int(valid.sum())

    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logsum
    rows = np.nonzero(valid)[0]
    nll = np.zeros(flat_targets.shape[0])
    nll[rows] = -logp[rows, flat_targets[rows]]

    def dlogits(scale: np.ndarray) -> np.ndarray:
        grad = np.exp(logp)
        grad[rows, flat_targets[rows]] -= 1.0
        grad *= (scale * valid)[:, None]
        return grad.reshape(logits.shape)

    if reduction == "none":
        out = nll.reshape(targets.shape)
        return _result(out, (logits,), lambda g: (dlogits(g.reshape(-1)),))

    if count == 0:
        log.warning("cross_entropy: every position ignored, degenerate batch")
        out = _result(np.float64(0.0), (logits,), lambda g: (np.zeros_like(logits.values),))
        out.degenerate = True
        return out

    denom = float(count) if reduction == "mean" else 1.0
    total = nll.sum() / denom

    def grad_fn(g):
        return (dlogits(np.full(flat_targets.shape[0], float(g) / denom)),)

    return _result(np.float64(total), (logits,), grad_fn)


############### backward ###############


def _reachable(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.tape_id in seen or not node.requires_grad:
            continue
        seen[node.tape_id] = node
        stack.extend(node._parents)
    return sorted(seen.values(), key=lambda t: t.tape_id, reverse=True)


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into the ``grad`` buffer of every reachable leaf."""
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.values)}
    for node in _reachable(loss):
        g = pending.pop(node.tape_id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.tape_id in pending:
                pending[parent.tape_id] = pending[parent.tape_id] + pg
            else:
                pending[parent.tape_id] = pg


def gradcheck(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> float:
    """
    Compare analytic gradients with central differences.

    Returns the worst relative error ``|a - n| / max(|a|, |n|, floor)`` over the
    checked entries (all of them, or ``samples_per_param`` random ones each).
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.values.reshape(-1)
            if samples_per_param is None or samples_per_param >= flat.size:
                indices = range(flat.size)
            else:
                indices = rng.choice(flat.size, size=samples_per_param, replace=False)
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                plus = fn().item()
                flat[i] = original - h
                minus = fn().item()
                flat[i] = original
                numeric = (plus - minus) / (2 * h)
                a = grad.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    return worst
