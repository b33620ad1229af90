"""Compiled row kernels for batched masking attention.

Score blocks are laid out ``(H, T, T)`` (heads of one sample). The matrix
products around these kernels go through BLAS; only the row-wise
threshold/softmax bookkeeping lives here.
"""

import ctypes
import math

import numba as nb
import numpy as np

# exp() of anything below this is < 1e-130 relative to the row maximum (which
# maps to 1), so the weight is stored as an exact zero instead. Clamping also
# keeps numpy's vectorized exp off its slow underflow path, and keeps products
# of tiny weights with small gradients out of the subnormal range.
UNDERFLOW = -300.0
_EXP_UNDERFLOW = math.exp(UNDERFLOW)
_FASTMATH = True


@nb.njit(cache=True, nogil=True, fastmath=_FASTMATH, inline="always")
def _row_max(row, lanes):
    # eight independent running maxima vectorize; a single one does not
    T = row.shape[0]
    for j in range(8):
        lanes[j] = row[0]
    n8 = T // 8 * 8
    for c in range(0, n8, 8):
        for j in range(8):
            v = row[c + j]
            lanes[j] = v if v > lanes[j] else lanes[j]
    hi = lanes[0]
    for j in range(8):
        hi = max(hi, lanes[j])
    for c in range(n8, T):
        hi = max(hi, row[c])
    return hi


@nb.njit(cache=True, nogil=True, fastmath=_FASTMATH)
def prepare_scores(S, scale, masked, penalty):
    """In place: S <- clamp(scale*S + Mask - rowmax(scale*S)), ready for exp().

    Mask is ``penalty`` (must be negative) where a scaled score is strictly
    below its row mean. The mean is capped at the row maximum, so an all-equal
    row is never masked, and the row maximum is never masked, so it stays the
    softmax shift.
    """
    G, T, _ = S.shape
    lanes = np.empty(8)
    for g in range(G):
        for r in range(T):
            row = S[g, r]
            total = 0.0
            for c in range(T):
                v = row[c] * scale
                row[c] = v
                total += v
            hi = _row_max(row, lanes)
            thr = min(total / T, hi)
            if masked:
                for c in range(T):
                    v = row[c]
                    v = v + penalty if v < thr else v
                    row[c] = max(v - hi, UNDERFLOW)
            else:
                for c in range(T):
                    row[c] = max(row[c] - hi, UNDERFLOW)


@nb.njit(cache=True, nogil=True, fastmath=_FASTMATH)
def normalize_rows(E):
    """In place: zero entries at the underflow floor, then divide rows by their sums."""
    G, T, _ = E.shape
    for g in range(G):
        for r in range(T):
            row = E[g, r]
            total = 0.0
            for c in range(T):
                v = row[c]
                v = v if v > _EXP_UNDERFLOW else 0.0
                row[c] = v
                total += v
            inv = 1.0 / total
            for c in range(T):
                row[c] *= inv


@nb.njit(cache=True, nogil=True, fastmath=_FASTMATH)
def softmax_backward_rows(W, dW, scale):
    """In place: dW <- scale * W * (dW - rowsum(W * dW))."""
    G, T, _ = W.shape
    for g in range(G):
        for r in range(T):
            w = W[g, r]
            d = dW[g, r]
            acc = 0.0
            for c in range(T):
                acc += w[c] * d[c]
            for c in range(T):
                d[c] = scale * w[c] * (d[c] - acc)


_tuned = False


def tune_allocator():
    """Keep freed blocks up to 32 MiB on the glibc heap instead of unmapping them.

    Training reallocates the same few-MiB attention buffers every step; with
    the default thresholds each one is a fresh mmap and pays page faults on
    first touch. No-op on non-glibc platforms.
    """
    global _tuned
    if _tuned:
        return
    _tuned = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 32 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass
