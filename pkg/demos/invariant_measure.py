"""
Invariant measure of a switching linear system
==============================================

A single contracting flow ``x' = -x`` runs for an exponential time, then
the jump ``x -> x/2 + 1`` relocates the point.  The stationary mean and second moment solve scalar fixed-point
recursions, which we compare against a long chain run.
"""
import time

import numpy as np

import rdsjumps as rj

spec = rj.linear1d(c=1.0, lam=1.0)
print(spec.name, "lambda =", spec.lam, "constants:", spec.constants)

# A handful of raw steps: jump time, old and new flow index, landing point.
path = rj.sample_chain(spec, [0.0], 0, n=5, rng=rj.RngStream(1))
for n in range(5):
    print(f"dt={path.dt[n]:.3f}  flow {path.xi_prev[n]} -> {path.xi[n]}  y={path.y[n, 0]:.3f}  x={path.x[n, 0]:.3f}")

# Long run after burn-in; the empirical measure keeps every visited state.
t0 = time.perf_counter()
mu = rj.estimate_invariant(spec, burn_in=1000, n_keep=200_000, seed=2024)
print(f"\n{len(mu)} atoms in {time.perf_counter() - t0:.2f}s")
print("mean          ", mu.mean()[0], "  exact 4/3 =", 4 / 3)
print("second moment ", mu.moment(2)[0], "  exact 20/11 =", 20 / 11)

# Every post-jump point lies in [1, 2): the jump maps [0, 2) into it.
print("support", mu.points.min(), mu.points.max())

# Histogram of positions, printed as text so no plotting library is needed.
hist, edges = np.histogram(mu.points[:, 0], bins=12, weights=mu.weights)
for h, lo in zip(hist, edges):
    print(f"{lo:6.2f} {'#' * int(200 * h)}")
