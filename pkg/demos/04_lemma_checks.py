"""Numerical checks of the analytic inequalities on synthetic inputs.

Shows the exponent bookkeeping, one reverse-Jensen ratio for a random
Hölder sample, the covariance lower bound for a random compactly
supported field, and the cutoff properties.

Run: python3 demos/04_lemma_checks.py
"""

import numpy as np

from csplab.kernels import CorrelationKernel
from csplab.lemma_lab import (
    build_phi,
    covariance_lower_bound_check,
    cutoff_properties_check,
    exponents,
    holder_sample,
    random_compact_field,
    reverse_jensen_x,
)
from csplab.noise import Grid

rng = np.random.default_rng(0)

e = exponents(gamma=0.2, lam=0.5, d=1)
print(f"l = {e.l:.5f}, L = {e.L:.5f}, identity error {e.identity_error:.1e}")

sample = holder_sample(rng, gamma=0.5, H=2.0, dim=1, period=6.0)
rep = reverse_jensen_x(sample, R=2.0, r=None, a=0.0, b=1.0, gamma=0.5, lam=0.5, H=2.0)
print(f"spatial reverse Jensen: r = {rep['params']['r']:.3g}, ratio = {rep['ratio']:.4g}")

grid = Grid(1, 256, 8.0)
kernel = CorrelationKernel.ou(1.0, 1)
phi = build_phi(kernel, eps=0.25, grid=grid)
g = random_compact_field(rng, grid)
rep = covariance_lower_bound_check(g, phi, kernel, grid)
print(f"covariance bound: c = {phi.c:.4f}, r = {phi.r:.3f}, lhs = {rep['lhs']:.4g} >= rhs = {rep['rhs']:.4g}: "
      f"{rep['holds']}")

cut = cutoff_properties_check(lam=0.5)
for row in cut["rows"]:
    print(f"cutoff n={row['n']:>4}: sup|h_n - h| on [0,10] = {row['sup_dev']:.4f}, Lipschitz {row['lipschitz']:.2f}")
print("cutoff checks:", cut["checks"])
