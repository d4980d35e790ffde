"""
Checking backpropagation against finite differences
===================================================

The multi-head network's loss adds a penalty on the overlap between the
first two heads' output weights. Compare the analytic gradient with a
central difference for each coordinate.
"""

import numpy as np
import scipy.sparse as sp

from tritrain.model import MultiHeadNet, gradients, loss, orth_loss

rng = np.random.default_rng(0)
net = MultiHeadNet(rng.normal(size=(6, 4)), rng.normal(size=4),
                   [rng.normal(size=(4, 3)) for _ in range(3)],
                   [rng.normal(size=3) for _ in range(3)])

# Head 2 gets no data this step; it is skipped, not an error.
batches = [(sp.csr_matrix(rng.normal(size=(5, 6))), rng.integers(0, 3, 5)),
           None,
           (sp.csr_matrix(rng.normal(size=(2, 6))), rng.integers(0, 3, 2))]

for gamma in (0.0, 0.01, 1.0):
    g = gradients(net, batches, gamma)
    worst = 0.0
    for name, p in net.params().items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-5
            up = loss(net, batches, gamma)
            p[idx] = old - 1e-5
            down = loss(net, batches, gamma)
            p[idx] = old
            num = (up - down) / 2e-5
            worst = max(worst, abs(num - g[name][idx]) / max(abs(num), abs(g[name][idx]), 1e-300))
    print(f"gamma={gamma:<5} loss={loss(net, batches, gamma):8.4f}  max rel err={worst:.2e}")

print("overlap ||W1^T W2||^2 =", round(orth_loss(net.W_heads[0], net.W_heads[1]), 4))
