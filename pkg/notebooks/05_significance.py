"""
Paired bootstrap significance
=============================

How often does a resampled test set fail to show an improvement? Small
gains on few examples are not significant; the same gain on many is.
"""

import numpy as np

from tritrain.eval import accuracy, paired_bootstrap_test

rng = np.random.default_rng(3)
for n in (50, 200, 1000):
    gold = rng.integers(0, 2, n)
    base = np.where(rng.random(n) < 0.80, gold, 1 - gold)
    better = base.copy()
    wrong = np.flatnonzero(base != gold)
    fix = wrong[: max(1, n // 33)]  # about three points
    better[fix] = gold[fix]
    p = paired_bootstrap_test(better, base, gold, resamples=5000, seed=0)
    print(f"n={n:<5} {100 * accuracy(base, gold):5.1f} -> {100 * accuracy(better, gold):5.1f}   p={p:.4f}")

# Equal accuracy on the full set means no evidence at all.
print("identical:", paired_bootstrap_test(base, base, gold))
