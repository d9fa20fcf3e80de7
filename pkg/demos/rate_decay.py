"""
Geometric decay in the Fortet-Mourier distance
==============================================

Start the linear system from two Dirac masses far apart, push both through
the chain as ensembles, and measure the Fortet-Mourier distance of the two
empirical laws at each step.  A log-linear fit of the distances estimates
the rate ``q``; Monte Carlo noise sets a floor below which points are not
fitted.
"""
import numpy as np

import rdsjumps as rj

spec = rj.linear1d()

# The distance itself: an LP over 1-Lipschitz test functions bounded by 1.
d0, d1 = rj.EmpiricalMeasure.dirac(0.0, 0), rj.EmpiricalMeasure.dirac(10.0, 0)
print("FM(delta_0, delta_10) =", rj.fm_distance(d0, d1).value)
near = rj.EmpiricalMeasure.dirac(0.3, 0)
print("FM(delta_0, delta_0.3) =", rj.fm_distance(d0, near).value)

fit = rj.rate_fit(spec, rj.HybridState([0.0], 0), rj.HybridState([10.0], 0), n_max=12, ensemble=3000, fm_cap=1000, seed=3)
print(f"\n{'n':>3} {'D_n':>10} {'noise':>10} used")
for n, d, e, u in zip(fit.n, fit.D, fit.noise, fit.used):
    print(f"{n:3d} {d:10.5f} {e:10.5f} {'*' if u else ''}")
print(f"\nstatus {fit.status}: q = {fit.q:.3f}, C = {fit.C:.3f}, residual {fit.residual:.3f}")
print("sum of gamma_n = C / (1 - q):", fit.gamma_sum)
print("expected-distance contraction constant beta =", spec.lam * spec.constants.L * spec.constants.L_q
      / (spec.lam - spec.constants.alpha))
for note in fit.notes:
    print("note:", note)
