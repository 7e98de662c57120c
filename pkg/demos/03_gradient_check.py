"""Verify the hand-built autodiff engine against finite differences.

Checks the contrastive losses on raw embeddings and composed through both
encoder towers. Also shows the engine on a tiny expression.

    python demos/03_gradient_check.py
"""

import numpy as np

from gesturerep import diffcore as dc
from gesturerep.cli import gradient_check_battery
from gesturerep.diffcore import Tensor

# the engine in three lines: eager forward, reverse-mode backward
x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
loss = dc.mean(dc.mul(x, x))
dc.backward(loss)
print(f"f(x) = mean(x^2) at {x.values}: grad = {x.grad}   (expected 2x/3)")

print("\nfinite-difference battery (losses alone and through the towers):")
results = gradient_check_battery()
for name, err in sorted(results.items()):
    print(f"  {name:>24}: max relative error {err:.3e}")
print(f"\nworst: {max(results.values()):.3e}  (threshold 1e-4)")
