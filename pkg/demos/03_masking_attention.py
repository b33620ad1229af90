"""Masking attention next to plain softmax attention on one score matrix.

Scores below their row mean get a -1e9 penalty, so each query spreads its
weight only over the keys that scored above average.
"""

import numpy as np

from ssvep_bima.nn import attention_mask, masked_attention

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)
Q, K = rng.standard_normal((2, 5, 4))
V = np.eye(5)

_, plain = masked_attention(Q, K, V, mask_enabled=False)
_, masked = masked_attention(Q, K, V)
scores = Q @ K.T / 2.0

print("scores\n", scores)
print("mask (0 keeps, -1e9 drops)\n", attention_mask(scores) / 1e9)
print("plain softmax weights\n", plain)
print("masked weights\n", masked)
print("nonzero weights per row:", (masked > 0).sum(axis=1), "row sums:", masked.sum(axis=1))

# A row of equal scores is never masked: it stays uniform.
_, flat = masked_attention(Q, np.tile(K[:1], (5, 1)), V)
print("identical keys give uniform rows:", np.allclose(flat, 0.2))
