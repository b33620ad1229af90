"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore, Tape, Tensor


def relative_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def analytic_gradients(f, params: ParamStore) -> dict[str, np.ndarray]:
    params.zero_grad()
    with Tape() as tape:
        loss = f(params)
    tape.backward(loss)
    return {name: t.grad.copy() for name, t in params.items()}


def _value(f, params):
    out = f(params)
    return float(out.data) if isinstance(out, Tensor) else float(out)


def numeric_gradients(f, params: ParamStore, step=1e-5) -> dict[str, np.ndarray]:
    """(f(theta + h) - f(theta - h)) / 2h for every coordinate of every parameter."""
    grads = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _value(f, params)
            flat[i] = orig - step
            down = _value(f, params)
            flat[i] = orig
            g[i] = (up - down) / (2 * step)
        grads[name] = g.reshape(t.shape)
    return grads


def grad_check(f, params: ParamStore, step=1e-5, detail=False):
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must be deterministic and return a scalar Tensor built from
    the parameters in ``params``. Relative error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``. With ``detail=True`` a per-parameter
    breakdown is returned as well.
    """
    analytic = analytic_gradients(f, params)
    numeric = numeric_gradients(f, params, step)
    per_param = {name: float(relative_error(analytic[name], numeric[name]).max(initial=0.0)) for name in analytic}
    worst = max(per_param.values(), default=0.0)
    return (worst, per_param) if detail else worst
