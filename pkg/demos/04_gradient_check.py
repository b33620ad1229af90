"""Finite-difference check of every gradient in a small full model.

The instance has 3 channels, 32 samples and 3 classes, with both streams,
masking and the MLP head switched on. Central differences with step 1e-5
are compared to the analytic gradients from the tape.
"""

import time

from ssvep_bima import nn
from ssvep_bima.verify import gradcheck_instance

model, loss_fn = gradcheck_instance(seed=0)
print(f"{len(model.params)} parameter tensors, {model.params.num_values()} values")
print("tokens per stream:", model.token_counts())

start = time.perf_counter()
worst_err, errors = nn.grad_check(loss_fn, model.params, step=1e-5, detail=True)
elapsed = time.perf_counter() - start
worst = sorted(errors.items(), key=lambda kv: kv[1], reverse=True)[:5]
for name, err in worst:
    print(f"  {name:28s} {err:.2e}")
print(f"max relative error {worst_err:.2e} in {elapsed:.1f} s")
