"""
Coupled chains and one-step contraction
=======================================

Two copies of the gene-toggle model are run with a maximal coupling: they
share the waiting time and jump whenever possible (the Q branch) and fall
back to independent residual draws otherwise.  On the Q branch the expected
distance shrinks by at least ``beta``, and the probability of leaving it is
bounded by a multiple of the current distance.
"""
import numpy as np

import rdsjumps as rj

spec = rj.genetoggle()
c = spec.constants
beta = spec.lam * c.L * c.L_q / (spec.lam - c.alpha)
print("constants:", c)
print("beta =", beta)

# One coupled pair, followed for a few steps.
rng = np.random.default_rng(5)
a, b = rj.HybridState([-2.0], 0), rj.HybridState([3.0], 1)
cs = None
for n in range(6):
    print(n, a, b, "distance", round(rj.hybrid_distance(a, b, spec.space), 4), "start" if cs is None else ("Q" if cs.coupled_flag else "R"))
    cs = rj.sample_coupling(spec, a, b, rng)
    a, b = cs.first, cs.second

# Contraction estimate over random pairs.
gen = np.random.default_rng(6)
pairs = [
    (rj.HybridState([x], i), rj.HybridState([y], j))
    for x, y, i, j in zip(gen.uniform(-5, 5, 50), gen.uniform(-5, 5, 50), gen.integers(0, 2, 50), gen.integers(0, 2, 50))
]
est = rj.coupling_contraction_estimate(spec, pairs, n_steps=1, n_rep=500, seed=7)
print(f"\nQ-branch ratio {est.beta_hat:.4f} (beta = {beta:.2f})")
print(f"fraction of steps on the Q branch {est.q_fraction[0]:.4f}")
print(f"landing in the contraction event {est.contraction_frequency:.4f} +- {est.contraction_stderr:.4f}"
      f"  (guaranteed >= {est.positivity_bound:.5f})")

# Mass of the Q branch against its lower bound 1 - (... ) rho.
X = np.linspace(-3, 3, 7)[:, None]
M = rj.coupled_mass_batch(spec, X, np.zeros(7, int), X + 0.1, np.zeros(7, int))
print("\ncoupled mass at distance 0.1:", np.round(M, 5))
