"""Why the mean of per-subject ITRs beats the ITR of the mean accuracy.

ITR is convex in accuracy. Two subjects at 60 % and 100 % average to 80 %,
but their ITRs average to more than the ITR at 80 %.
"""

import numpy as np

from ssvep_bima.evaluation import itr_bits_per_min

M, window = 12, 0.75
print(f"perfect accuracy, 12 classes, 1 s: {itr_bits_per_min(1.0, 12, 1.0):.4f} bits/min")
print(f"chance accuracy gives {itr_bits_per_min(1 / M, M, window):.1f} bits/min")

pair = [0.6, 1.0]
mean_of_itr = np.mean([itr_bits_per_min(p, M, window) for p in pair])
itr_of_mean = itr_bits_per_min(np.mean(pair), M, window)
print(f"accuracies {pair}: mean of ITRs {mean_of_itr:.1f}, ITR of mean {itr_of_mean:.1f}")

# Spread 78.66 % mean accuracy across subjects and the gap widens.
rng = np.random.default_rng(0)
for spread in (0.0, 0.1, 0.2):
    accs = np.clip(0.7866 + spread * rng.standard_normal(10_000), 1 / M, 1.0)
    accs += 0.7866 - accs.mean()
    accs = np.clip(accs, 1 / M, 1.0)
    itrs = [itr_bits_per_min(p, M, window) for p in accs]
    print(f"spread {spread:.1f}: mean accuracy {accs.mean():.4f}, mean ITR {np.mean(itrs):6.1f}, "
          f"ITR of mean {itr_bits_per_min(accs.mean(), M, window):6.1f}")
