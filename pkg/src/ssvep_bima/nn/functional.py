"""Forward primitives and their closed-form derivatives, on plain arrays.

Everything here is 64-bit and stateless. The tape-level wrappers in
:mod:`ssvep_bima.nn.autodiff` call into these.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..errors import LabelIndexError, ParameterError, ShapeError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as64(x):
    return np.asarray(x, dtype=np.float64)


def linear_forward(x, W, b=None):
    """y = x @ W + b over the last axis of x."""
    x, W = _as64(x), _as64(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {W.shape}")
    y = x @ W
    if b is not None:
        b = _as64(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
        y = y + b
    return y


def layer_norm_stats(x, eps):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return centered * rstd, rstd


def layer_norm_forward(x, gamma, beta, eps=1e-5):
    """Normalize each last-axis slice with its biased variance, then scale and shift."""
    x = _as64(x)
    gamma, beta = _as64(gamma), _as64(beta)
    if x.shape[-1] < 1 or gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xhat, _ = layer_norm_stats(x, eps)
    return xhat * gamma + beta


def layer_norm_backward(dy, xhat, rstd, gamma):
    """Returns (dx, dgamma, dbeta) for y = xhat * gamma + beta."""
    lead = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=lead)
    dbeta = np.sum(dy, axis=lead)
    g = dy * gamma
    dx = rstd * (g - g.mean(axis=-1, keepdims=True) - xhat * np.mean(g * xhat, axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def gelu_forward(x):
    """Exact GELU, x * Phi(x)."""
    x = _as64(x)
    return x * special.ndtr(x)


def gelu_grad(x, cdf=None):
    """d/dx [x Phi(x)] = Phi(x) + x phi(x)."""
    if cdf is None:
        cdf = special.ndtr(x)
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax_rows(x):
    x = _as64(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y):
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def dropout_mask(shape, p, rng):
    """Inverted-dropout multiplier: 0 with probability p, 1/(1-p) otherwise."""
    keep = rng.random(shape) >= p
    return keep * (1.0 / (1.0 - p))


def dropout_forward(x, p, training, rng=None):
    x = _as64(x)
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a random generator")
    return x * dropout_mask(x.shape, p, rng)


def check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError(f"labels must be a 1-D integer array, got {labels.dtype} {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise LabelIndexError(f"label {bad} outside [0, {num_classes})")
    return labels


def log_softmax(x):
    x = _as64(x)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    ``logits`` is (B, K); returns ``(loss, dlogits)`` with
    ``dlogits = (softmax - onehot) / B``.
    """
    logits = _as64(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, K) logits, got {logits.shape}")
    b, k = logits.shape
    labels = check_labels(labels, k)
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for {b} rows of logits")
    logp = log_softmax(logits)
    rows = np.arange(b)
    loss = -np.mean(logp[rows, labels])
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= b
    return float(loss), grad


# ---------------------------------------------------------------------------
# Reference (single-head, unbatched) masking attention
# ---------------------------------------------------------------------------


def row_mean_threshold(S):
    """Per-row mean of the scores, capped at the row maximum.

    The cap only matters for rounding: an all-equal row must not compare
    above its own mean, so nothing in it is masked.
    """
    return np.minimum(S.mean(axis=-1, keepdims=True), S.max(axis=-1, keepdims=True))


def attention_mask(S, penalty=-1e9):
    """Additive mask: ``penalty`` where a score is strictly below its row mean, else 0."""
    S = _as64(S)
    return np.where(S < row_mean_threshold(S), float(penalty), 0.0)


def masked_attention(Q, K, V, mask_enabled=True, penalty=-1e9):
    """softmax(Q K^T / sqrt(d_k) + Mask) V for one head.

    Returns ``(output, weights)`` with shapes (T, d_v) and (T, T).
    """
    Q, K, V = _as64(Q), _as64(K), _as64(V)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError(f"attention expects 2-D Q, K, V, got {Q.shape}, {K.shape}, {V.shape}")
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0] or Q.shape[1] < 1:
        raise ShapeError(f"attention shape mismatch: Q {Q.shape}, K {K.shape}, V {V.shape}")
    S = Q @ K.T / math.sqrt(Q.shape[1])
    if mask_enabled:
        S = S + attention_mask(S, penalty)
    W = softmax_rows(S)
    return W @ V, W


def positional_encoding(num_positions, dim):
    """Sinusoidal table (T, d): sin on even columns, cos on odd columns."""
    if dim % 2 or dim < 2:
        raise ParameterError(f"positional encoding width must be even, got {dim}")
    pos = np.arange(num_positions, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.empty((num_positions, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe
