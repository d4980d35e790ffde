"""
Bootstrapping on a rotated two-Gaussian task
============================================

Source and target share two classes; the target class means are rotated by
30 degrees. Compare source-only training with self-training and
tri-training on three seeds.
"""

import numpy as np

from tritrain.data import SplitSpec, make_splits, synth_domain_shift
from tritrain.eval import aggregate
from tritrain.ssl import SslConfig, run_strategy

strategies = ["src_only", "self_throttled", "tri", "tri_d"]
scores = {s: [] for s in strategies}
pseudo = {s: [] for s in strategies}

for seed in range(3):
    source, target = synth_domain_shift(200, 1700, 30.0, 0.3, seed)
    L, U, dev, test = make_splits(source, target, SplitSpec(200, 1000, 200, seed))
    cfg = SslConfig(seed=seed, throttle_n=200, outer_epochs=5)
    for s in strategies:
        res = run_strategy(s, L, U, dev, cfg)
        scores[s].append(res.predictor.accuracy(test))
        pseudo[s].append(res.total_pseudo)

print(f"{'strategy':<16}{'mean':>8}{'std':>7}{'pseudo':>9}")
for s in strategies:
    mean, std = aggregate(scores[s])
    print(f"{s:<16}{100 * mean:8.2f}{100 * std:7.2f}{np.mean(pseudo[s]):9.0f}")

# The source boundary is already close to optimal on this target, so the
# gains are small and concentrated on unlucky seeds.
