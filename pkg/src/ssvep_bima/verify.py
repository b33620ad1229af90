"""Self-check suite: each check pits a production path against an independent oracle.

Run with ``bima verify``. Every check returns a :class:`CheckResult`; the
command exits nonzero if any check fails or raises.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .evaluation import itr_bits_per_min, paired_t_test
from .model import BimaConfig, BimaModel, forward_tokens
from .nn import functional as F
from .spectral import SpectralConfig, complex_spectrum, dft


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<12} {self.detail} ({self.seconds:.1f}s)"


# ---------------------------------------------------------------------------
# Shared instances and oracles
# ---------------------------------------------------------------------------

GRADCHECK_FS = 32.0
GRADCHECK_SPECTRAL = SpectralConfig(resolution_hz=1.0, band_low_hz=2.0, band_high_hz=14.0)


def gradcheck_instance(seed=0, batch=4):
    """Small full model (C=3, T=32, K=3, N=6, 2 heads) with dropout off, plus a batch."""
    rng = np.random.default_rng(seed)
    cfg = BimaConfig(num_channels=3, num_classes=3, dropout_p=0.0)
    model = BimaModel.create(cfg, GRADCHECK_FS, 32, GRADCHECK_SPECTRAL, seed=seed)
    trials = rng.standard_normal((batch, 3, 32))
    labels = rng.integers(0, 3, batch)
    inputs = model.prepare(trials)

    def loss_fn(params):
        return nn.cross_entropy_loss(forward_tokens(inputs, params, cfg, training=False), labels)

    return model, loss_fn


def direct_dft(x, nfft):
    """O(n^2) sum X[k] = sum_t x[t] exp(-2 pi i k t / nfft) along the first axis of x."""
    x = np.asarray(x, dtype=np.float64)
    t = np.arange(x.shape[0])
    k = np.arange(nfft)[:, None]
    # reduce k*t mod nfft in integers so the phase stays accurate for long inputs
    phase = -2.0 * np.pi * ((k * t) % nfft) / nfft
    return (np.cos(phase) + 1j * np.sin(phase)) @ x


def plain_attention(S, V):
    """Softmax of each score row, computed row by row with math.exp."""
    out = np.zeros((S.shape[0], V.shape[1]))
    for r in range(S.shape[0]):
        m = max(S[r])
        e = [math.exp(s - m) for s in S[r]]
        tot = math.fsum(e)
        out[r] = np.array(e) / tot @ V
    return out


def attention_weights(S, mask_enabled=True, penalty=-1e9):
    """Production batched attention driven so that its weights equal its output.

    With one head of width T, Q = S and K = sqrt(T) I give Q K^T / sqrt(T) = S,
    and V = I returns the weight matrix itself.
    """
    T = S.shape[0]
    q = nn.Tensor(S[None])
    k = nn.Tensor(math.sqrt(T) * np.eye(T)[None])
    v = nn.Tensor(np.eye(T)[None])
    return nn.multi_head_attention(q, k, v, 1, mask_enabled, penalty).data[0]


class ReferenceAdam:
    def __init__(self, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta, g):
        if self.m is None:
            self.m, self.v = np.zeros_like(theta), np.zeros_like(theta)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g**2
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def check_gradients():
    model, loss_fn = gradcheck_instance()
    err = nn.grad_check(loss_fn, model.params, step=1e-5)
    return err < 1e-4, f"max relative error {err:.2e} over {model.params.num_values()} values"


def check_softmax():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(0, 5, size=(4, int(rng.integers(1, 40))))
        y = F.softmax_rows(x)
        ref = np.array([[math.exp(v - max(r)) / math.fsum(math.exp(u - max(r)) for u in r) for v in r] for r in x])
        worst = max(worst, float(np.max(np.abs(y - ref))))
    y = F.softmax_rows(np.array([[-1e9, 2.0, 3.0]]))[0]
    ok = worst < 1e-12 and abs(y[1] - 0.26894142) < 1e-5 and abs(y[2] - 0.73105858) < 1e-5 and y[0] < 1e-300
    return ok, f"max deviation {worst:.1e}"


def check_mask():
    rng = np.random.default_rng(2)
    worst_sum = worst_masked = worst_plain = 0.0
    uniform_ok = True
    for i in range(100):
        T = int(rng.integers(2, 40))
        S = rng.normal(0, 3, size=(T, T))
        if i % 10 == 0:
            S[: T // 2] = rng.normal(size=(T // 2, 1))  # all-equal rows
        W = attention_weights(S)
        worst_sum = max(worst_sum, float(np.max(np.abs(W.sum(axis=1) - 1))))
        below = S < S.mean(axis=1, keepdims=True)
        const = np.all(S == S[:, :1], axis=1)
        below[const] = False
        if below.any():
            worst_masked = max(worst_masked, float(W[below].max()))
        if const.any():
            uniform_ok &= bool(np.all(W[const] == W[const][:, :1]))
        V = rng.normal(size=(T, 3))
        got = nn.multi_head_attention(
            nn.Tensor(S[None]), nn.Tensor(math.sqrt(T) * np.eye(T)[None]), nn.Tensor(V[None]), 1, mask_enabled=False
        ).data[0]
        worst_plain = max(worst_plain, float(np.max(np.abs(got - plain_attention(S, V)))))
    ok = worst_sum < 1e-12 and worst_masked < 1e-6 and uniform_ok and worst_plain < 1e-12
    detail = (
        f"row-sum err {worst_sum:.1e}, masked max {worst_masked:.1e}, "
        f"uniform {'ok' if uniform_ok else 'BROKEN'}, unmasked vs plain {worst_plain:.1e}"
    )
    return ok, detail


def check_dft():
    rng = np.random.default_rng(3)
    worst = worst_parseval = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 2049))
        nfft = n + int(rng.integers(0, 64))
        x = rng.standard_normal(n)
        X = dft(x, nfft)
        ref = direct_dft(x, nfft)
        worst = max(worst, float(np.max(np.abs(X - ref)) / max(np.max(np.abs(ref)), 1e-300)))
        e_time = math.fsum(x * x)
        e_freq = math.fsum(np.abs(X) ** 2) / nfft
        worst_parseval = max(worst_parseval, abs(e_time - e_freq) / e_time)
    # 10 Hz tones over 256 of 1024 padded samples: |X| = 128, scaled by 2/1024 -> 0.25.
    # The cosine lands in the real (first) half, the sine in the imaginary half.
    fs, cfg = 256.0, SpectralConfig()
    t = np.arange(256) / fs
    feats = complex_spectrum(np.stack([np.cos(2 * np.pi * 10 * t), np.sin(2 * np.pi * 10 * t)]), fs, cfg)
    nfft = cfg.nfft(fs)
    bins = np.flatnonzero((np.arange(nfft) * fs / nfft >= 8) & (np.arange(nfft) * fs / nfft <= 64))
    ref = direct_dft(np.stack([np.cos(2 * np.pi * 10 * t), np.sin(2 * np.pi * 10 * t)]).T, nfft).T[:, bins] * 2 / nfft
    col = int(np.flatnonzero(feats.bin_frequencies_hz == 10.0)[0])
    f_count = len(bins)
    tones_ok = (
        feats.values.shape == (2, 2 * f_count)
        and np.allclose(feats.real, ref.real, rtol=0, atol=1e-9)
        and np.allclose(feats.imag, ref.imag, rtol=0, atol=1e-9)
        and abs(feats.values[0, col] - 0.25) < 1e-9
        and abs(feats.values[1, f_count + col] + 0.25) < 1e-9
    )
    ok = worst < 1e-9 and worst_parseval < 1e-9 and tones_ok
    return ok, f"max rel err {worst:.1e}, Parseval {worst_parseval:.1e}, tones {'ok' if tones_ok else 'BROKEN'}"


def check_adam():
    from .training import AdamState, TrainConfig, adam_step

    rng = np.random.default_rng(4)
    cfg = TrainConfig(learning_rate=0.01)
    store = nn.ParamStore({"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)})
    state = AdamState(store)
    refs = {n: ReferenceAdam(lr=0.01) for n in store}
    theta = {n: t.data.copy() for n, t in store.items()}
    worst = 0.0
    for step in range(1, 1001):
        for n, t in store.items():
            t.grad = rng.standard_normal(t.shape)
            theta[n] = refs[n].step(theta[n], t.grad)
        adam_step(store, state, step, cfg)
        worst = max(worst, max(float(np.max(np.abs(store[n].data - theta[n]))) for n in store))
    quad = nn.ParamStore({"theta": np.array([1.0])})
    qstate = AdamState(quad)
    qcfg = TrainConfig(learning_rate=0.1)
    for step in range(1, 101):
        quad["theta"].grad = 2.0 * quad["theta"].data
        adam_step(quad, qstate, step, qcfg)
    final = abs(float(quad["theta"].data[0]))
    return worst < 1e-12 and final < 0.05, f"max deviation {worst:.1e}, |theta| after 100 steps {final:.4f}"


def check_itr():
    perfect = itr_bits_per_min(1.0, 12, 1.0)
    chance = [itr_bits_per_min(1.0 / m, m, 1.0) for m in (2, 5, 12)]
    mono = True
    for m in (2, 5, 12):
        vals = [itr_bits_per_min(p, m, 1.0) for p in np.linspace(1.0 / m, 1.0, 1000)]
        mono &= all(b >= a for a, b in zip(vals, vals[1:]))
    scaling = abs(itr_bits_per_min(0.8, 12, 2.0) - itr_bits_per_min(0.8, 12, 1.0) / 2) < 1e-12
    table = itr_bits_per_min(0.7866, 12, 0.75)
    ok = abs(perfect - 60.0 * math.log(12) / math.log(2)) < 1e-9 and all(c == 0.0 for c in chance) and mono and scaling and abs(table - 167.9) < 0.1
    return ok, f"itr(1,12,1s)={perfect:.2f}, itr(0.7866,12,0.75s)={table:.2f}, monotone {'ok' if mono else 'BROKEN'}"


def check_ttest():
    res = paired_t_test([1.0, 0.0, 2.0], [0.0, 0.0, 0.0])
    same = paired_t_test([1.0, 2.0], [1.0, 2.0])
    shift = paired_t_test([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
    ok = (
        abs(res.t - math.sqrt(3)) < 1e-12
        and abs(res.p - 0.2254033307585166) < 1e-9
        and res.df == 2
        and (same.t, same.p) == (0.0, 1.0)
        and shift.degenerate
        and shift.t == math.inf
    )
    return ok, f"t={res.t:.4f}, p={res.p:.4f}, df={res.df}"


CHECKS = {
    "gradients": check_gradients,
    "softmax": check_softmax,
    "mask": check_mask,
    "dft": check_dft,
    "adam": check_adam,
    "itr": check_itr,
    "ttest": check_ttest,
}


def run_checks(names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        try:
            passed, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results
