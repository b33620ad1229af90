"""Reverse-mode differentiation over a recorded operation tape.

Usage::

    with Tape() as tape:
        loss = cross_entropy_loss(model(x), y)
    tape.backward(loss)

Ops called while a tape is active append a backward closure to it. The tape
is executed in reverse order, so the recorded DAG is visited in a valid
topological order and gradients flowing into a tensor from several consumers
are summed. Dropout and attention masks are captured as constants.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np

from ..errors import ParameterError, ShapeError, StateError
from . import _kernels
from . import functional as F

_local = threading.local()


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_owns_grad")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._owns_grad = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g
        elif self._owns_grad:
            np.add(self.grad, g, out=self.grad)
        else:
            self.grad = self.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def current_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Records backward closures for ops executed inside ``with tape:``."""

    def __init__(self):
        self._records = []
        self._outputs = set()

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, inputs, backward: Callable):
        self._records.append((out, tuple(inputs), backward))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor, seed=None):
        """Propagate d(loss) back to every tensor with ``requires_grad``.

        The tape is consumed; intermediates are released afterwards.
        """
        if not self._records or id(loss) not in self._outputs:
            raise StateError("backward called before a forward pass was recorded on this tape")
        loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for out, inputs, fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for t, gi in zip(inputs, grads):
                if gi is not None and t.requires_grad:
                    t._accumulate(gi)
            if not out._owns_grad:
                out.grad = None
        self._records.clear()
        self._outputs.clear()


def _op(data, inputs, backward) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad:
        tape = current_tape()
        if tape is not None:
            tape.record(out, inputs, backward)
    return out


class ParamStore:
    """Named parameters with gradient buffers of identical shape."""

    def __init__(self, params=None):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        t._owns_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)
            t._owns_grad = True

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        return ParamStore({n: t.data.copy() for n, t in self._params.items()})

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data) for n, t in self._params.items())

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.grad) for n, t in self._params.items())


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    y = F.linear_forward(x.data, W.data, None if b is None else b.data)
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dx = g @ W.data.T if x.requires_grad else None
        dW = np.tensordot(x.data, g, axes=(lead, lead)) if W.requires_grad else None
        if b is None:
            return dx, dW
        return dx, dW, g.sum(axis=lead)

    inputs = (x, W) if b is None else (x, W, b)
    return _op(y, inputs, backward)


def channel_mix(x: Tensor, W: Tensor) -> Tensor:
    """Token-major weighted channel combination: (..., T, C) x (N, C) -> (..., T, N)."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"channel_mix: input {x.shape} does not match kernels {W.shape}")
    y = x.data @ W.data.T
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dx = g @ W.data if x.requires_grad else None
        dW = np.tensordot(g, x.data, axes=(lead, lead)) if W.requires_grad else None
        return dx, dW

    return _op(y, (x, W), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    y = a.data + b.data

    def backward(g):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return _op(y, (a, b), backward)


def add_constant(x: Tensor, c) -> Tensor:
    y = x.data + np.asarray(c, dtype=np.float64)
    return _op(y, (x,), lambda g: (g,))


def scale(x: Tensor, s: float) -> Tensor:
    return _op(x.data * s, (x,), lambda g: (g * s,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xhat, rstd = F.layer_norm_stats(x.data, eps)
    y = xhat * gamma.data + beta.data

    def backward(g):
        return F.layer_norm_backward(g, xhat, rstd, gamma.data)

    return _op(y, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    cdf = F.special.ndtr(x.data)
    return _op(x.data * cdf, (x,), lambda g: (g * F.gelu_grad(x.data, cdf),))


def softmax(x: Tensor) -> Tensor:
    y = F.softmax_rows(x.data)
    return _op(y, (x,), lambda g: (F.softmax_backward(g, y),))


def dropout(x: Tensor, p: float, training: bool, rng=None) -> Tensor:
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a random generator")
    mask = F.dropout_mask(x.shape, p, rng)
    return _op(x.data * mask, (x,), lambda g: (g * mask,))


def transpose_last(x: Tensor) -> Tensor:
    y = np.swapaxes(x.data, -1, -2)
    return _op(y, (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    y = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _op(y, tensors, backward)


def _split_heads(a, num_heads):
    b, t, w = a.shape
    return np.ascontiguousarray(a.reshape(b, t, num_heads, w // num_heads).transpose(0, 2, 1, 3))


def _merge_heads(a):
    b, h, t, d = a.shape
    return a.transpose(0, 2, 1, 3).reshape(b, t, h * d)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int, mask_enabled=True,
                         penalty=-1e9, weights_out: list | None = None) -> Tensor:
    """Batched masking attention on (B, T, n*d) projections; returns (B, T, n*d_v).

    Heads are contiguous blocks of the projection width. Work is done one
    sample at a time so each (n, T, T) score block stays cache-resident. When
    ``weights_out`` is a list, the (B, n, T, T) attention weights are appended.
    """
    if q.ndim != 3 or q.shape != k.shape or v.shape[:2] != k.shape[:2]:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if q.shape[-1] % num_heads or v.shape[-1] % num_heads:
        raise ShapeError(f"projection widths {q.shape[-1]}, {v.shape[-1]} not divisible by {num_heads} heads")
    B, T, _ = q.shape
    sc = 1.0 / math.sqrt(q.shape[-1] // num_heads)
    Q = _split_heads(q.data, num_heads)
    K = _split_heads(k.data, num_heads)
    V = _split_heads(v.data, num_heads)
    Kt = K.transpose(0, 1, 3, 2)
    masked, penalty = bool(mask_enabled), float(penalty)
    O = np.empty(V.shape)
    weights = []
    for b in range(B):
        w = np.matmul(Q[b], Kt[b])
        _kernels.prepare_scores(w, sc, masked, penalty)
        np.exp(w, out=w)
        _kernels.normalize_rows(w)
        np.matmul(w, V[b], out=O[b])
        weights.append(w)
    if weights_out is not None:
        weights_out.append(np.stack(weights))

    def backward(g):
        dO = _split_heads(g, num_heads)
        Vt = V.transpose(0, 1, 3, 2)
        dQ, dK, dV = np.empty(Q.shape), np.empty(K.shape), np.empty(V.shape)
        dS = np.empty(weights[0].shape)
        for b in range(B):
            w = weights[b]
            np.matmul(w.transpose(0, 2, 1), dO[b], out=dV[b])
            np.matmul(dO[b], Vt[b], out=dS)
            _kernels.softmax_backward_rows(w, dS, sc)
            np.matmul(dS, K[b], out=dQ[b])
            np.matmul(dS.transpose(0, 2, 1), Q[b], out=dK[b])
        weights.clear()
        return _merge_heads(dQ), _merge_heads(dK), _merge_heads(dV)

    return _op(_merge_heads(O), (q, k, v), backward)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    loss, dlogits = F.cross_entropy(logits.data, labels)
    return _op(np.array(loss), (logits,), lambda g: (dlogits * g,))
