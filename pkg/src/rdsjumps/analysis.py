"""
Numerical evidence for ergodicity: the contraction criterion, the Lyapunov
bound, empirical Lipschitz constants and overlap bounds, invariant-measure
estimates, the law of large numbers harness, and geometric-rate fits of the
Fortet-Mourier distance between two evolving laws.

Every routine is deterministic given its seeds; all reports serialise to JSON
through ``to_dict``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .core import HybridState, ModelConstants, SystemSpec, as_point
from .errors import ConfigurationError, SamplingError
from .measure import EmpiricalMeasure, fm_distance, subsample
from .observables import Observable, as_observable
from .operator import QuadratureSpec
from .sim import (
    RngStream,
    _Engine,
    _run_blocks,
    advance_batch,
    draw_initial_flow,
    ensemble_states,
)

__all__ = [
    "CriterionReport",
    "LyapunovReport",
    "S1Report",
    "LLNReport",
    "RateFit",
    "check_contraction_criterion",
    "lyapunov_offset",
    "verify_lyapunov",
    "estimate_constants",
    "check_s1",
    "invariant_states",
    "estimate_invariant",
    "lln_run",
    "rate_fit",
    "sign_test",
    "to_json",
]


def _clean(v):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def to_json(report) -> str:
    """Stable JSON text of a report (sorted keys, non-finite values as null)."""
    data = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(_clean(data), indent=2, sort_keys=True)


def sign_test(increases: int, n: int) -> float:
    """One-sided p-value of observing at least ``increases`` rises in ``n`` fair coin flips."""
    if n == 0:
        return 1.0
    return float(stats.binom.sf(increases - 1, n, 0.5))


# ---------------------------------------------------------------------------
# contraction criterion and the Lyapunov bound


@dataclass(frozen=True)
class CriterionReport:
    """``lhs = L L_q + alpha / lam``; satisfied iff ``lhs < 1`` and ``lam > alpha``.

    ``beta`` and ``a`` are both ``lam L L_q / (lam - alpha)``; ``b`` is the
    Lyapunov offset (NaN unless a system was supplied).
    """

    satisfied: bool
    lhs: float
    beta: float
    a: float
    b: float
    notes: str = ""

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def lyapunov_offset(spec: SystemSpec, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """``b = sum_{j,s} int lam e^{-lam t} rho(q_s(Pi_j(t, x*)), q_s(x*)) dt + sum_s rho(q_s(x*), x*)``."""
    xs = spec.x_star[None, :]
    t, w = quad.rule(spec.lam)
    XS = np.repeat(xs, len(t), axis=0)
    rho = spec.space.dist
    total = 0.0
    for j in range(spec.N):
        Y = spec.flows[j].evaluate(t, XS)
        for s in range(spec.K):
            q = spec.jumps[s]
            total += float(w @ rho(q.apply(Y), q.apply(XS)))
    for s in range(spec.K):
        total += float(rho(spec.jumps[s].apply(xs), xs)[0])
    return total


def check_contraction_criterion(
    constants: ModelConstants, lam: float, spec: Optional[SystemSpec] = None, quad: QuadratureSpec = QuadratureSpec()
) -> CriterionReport:
    """Evaluate ``L L_q + alpha / lam < 1`` and the derived constants.

    ``lam <= alpha`` is reported as unsatisfied (``a`` undefined), not raised.
    """
    if not lam > 0:
        raise ConfigurationError("lambda must be positive", field="lambda")
    c = constants
    lhs = c.L * c.L_q + c.alpha / lam
    if not lam > c.alpha:
        return CriterionReport(False, lhs, math.nan, math.nan, math.nan, "a undefined: lambda <= alpha")
    beta = lam * c.L * c.L_q / (lam - c.alpha)
    b = math.nan
    notes = ""
    if spec is not None:
        b = lyapunov_offset(spec.with_lambda(lam).with_constants(constants), quad)
    else:
        notes = "b not computed (no system given)"
    return CriterionReport(bool(lhs < 1.0), lhs, beta, beta, b, notes)


@dataclass
class LyapunovReport:
    a: float
    b: float
    probes: list
    estimates: np.ndarray
    stderrs: np.ndarray
    bounds: np.ndarray
    passed_each: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_each))

    @property
    def max_violation(self) -> float:
        """Largest ``estimate - (a lyap + b)`` (negative when every probe is strictly inside)."""
        return float(np.max(self.estimates - self.bounds))

    def to_dict(self) -> dict:
        return _clean(
            {
                "a": self.a,
                "b": self.b,
                "passed": self.passed,
                "max_violation": self.max_violation,
                "probes": [
                    {"x": list(p.x), "i": p.i, "estimate": e, "stderr": s, "bound": bd, "passed": bool(ok)}
                    for p, e, s, bd, ok in zip(self.probes, self.estimates, self.stderrs, self.bounds, self.passed_each)
                ],
            }
        )


def verify_lyapunov(spec: SystemSpec, probes: Sequence[HybridState], n_rep: int = 10_000, seed: int = 0) -> LyapunovReport:
    """Monte Carlo check of ``E[rho(x_1, x*)] <= a rho(x_0, x*) + b`` at each probe.

    Probe ``k`` uses ``RngStream(seed, k)``; a probe passes when the estimate
    is at most the bound plus three standard errors.
    """
    if spec.constants is None:
        raise ConfigurationError("x_star unknown: the model has no constants", field="constants")
    if n_rep < 100:
        raise ConfigurationError("n_rep must be >= 100", field="n_rep")
    crit = check_contraction_criterion(spec.constants, spec.lam, spec)
    xs = spec.x_star[None, :]
    probes = list(probes)
    est, se, bnd = (np.empty(len(probes)) for _ in range(3))
    for k, p in enumerate(probes):
        x0 = as_point(p.x, spec.dimension)
        X = np.repeat(x0[None, :], n_rep, axis=0)
        _, _, _, x1, _ = advance_batch(spec, X, np.full(n_rep, p.i), RngStream(seed, k))
        lyap1 = spec.space.dist(x1, np.repeat(xs, n_rep, axis=0))
        est[k] = lyap1.mean()
        se[k] = lyap1.std(ddof=1) / math.sqrt(n_rep)
        bnd[k] = crit.a * float(spec.space.dist(x0[None, :], xs)[0]) + crit.b
    return LyapunovReport(crit.a, crit.b, probes, est, se, bnd, est <= bnd + 3 * se)


# ---------------------------------------------------------------------------
# constants and (S1)


def _probe_pairs(spec, n, gen):
    R = spec.space.probe_radius
    X = gen.uniform(-R, R, size=(n, spec.dimension))
    Y = gen.uniform(-R, R, size=(n, spec.dimension))
    return X, Y


def estimate_constants(
    spec: SystemSpec,
    n_pairs: int = 1000,
    t_grid: Sequence[float] = tuple(np.linspace(0.0, 5.0, 11)),
    seed: int = 0,
    pairs=None,
) -> ModelConstants:
    """Empirical lower-bound candidates for the Lipschitz-type constants.

    ``alpha`` and ``L`` come from a log-linear regression of the largest
    observed ratio ``sum_j p_ij(y) rho(Pi_j(t,x), Pi_j(t,y)) / rho(x,y)`` over
    ``t_grid`` (``L`` is then raised until the bound covers every grid
    point); ``L_q``, ``L_p`` and ``L_pbar`` are the largest observed ratios;
    ``p0``, ``q0`` come from :func:`check_s1` with the estimated constants.
    All fields are flagged ``"estimated"``.

    Parameters
    ----------
    pairs : tuple of arrays (X, Y), optional
        Explicit probe pairs, each of shape (n, d); random pairs from the
        probe box are drawn otherwise.

    Raises
    ------
    SamplingError
        If every sampled pair is coincident.
    """
    if pairs is None and n_pairs < 100:
        raise ConfigurationError("n_pairs must be >= 100", field="n_pairs")
    gen = np.random.default_rng(seed)
    if pairs is None:
        X, Y = _probe_pairs(spec, n_pairs, gen)
    else:
        X = np.asarray(pairs[0], dtype=float).reshape(-1, spec.dimension)
        Y = np.asarray(pairs[1], dtype=float).reshape(-1, spec.dimension)
    rho = spec.space.dist
    d = rho(X, Y)
    keep = d > 0
    if not keep.any():
        raise SamplingError("all sampled pairs are coincident")
    X, Y, d = X[keep], Y[keep], d[keep]
    n = len(X)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 2 or np.any(t_grid < 0):
        raise ConfigurationError("t_grid needs at least two nonnegative times", field="t_grid")
    sup_ratio = np.zeros(len(t_grid))
    for k, t in enumerate(t_grid):
        tt = np.full(n, t)
        D = np.stack([rho(f.evaluate(tt, X), f.evaluate(tt, Y)) for f in spec.flows], axis=1)
        for i in range(spec.N):
            P = spec.probs.row(Y, np.full(n, i))
            sup_ratio[k] = max(sup_ratio[k], float(np.max((P * D).sum(axis=1) / d)))
    pos = sup_ratio > 0
    if pos.sum() >= 2:
        slope, _ = np.polyfit(t_grid[pos], np.log(sup_ratio[pos]), 1)
        alpha = float(slope)
        L = max(1.0, float(np.max(sup_ratio[pos] * np.exp(-alpha * t_grid[pos]))))
    else:
        alpha, L = 0.0, 1.0
    PB_x = spec.probs.jump(X)
    PB_y = spec.probs.jump(Y)
    Dq = np.stack([rho(q.apply(X), q.apply(Y)) for q in spec.jumps], axis=1)
    L_q = float(np.max((PB_x * Dq).sum(axis=1) / d))
    L_p = 0.0
    for i in range(spec.N):
        ii = np.full(n, i)
        L_p = max(L_p, float(np.max(np.abs(spec.probs.row(X, ii) - spec.probs.row(Y, ii)).sum(axis=1) / d)))
    L_pbar = float(np.max(np.abs(PB_x - PB_y).sum(axis=1) / d))
    x_star = tuple(spec.constants.x_star) if spec.constants is not None else (0.0,) * spec.dimension
    prov = {k: "estimated" for k in ("L", "alpha", "L_q", "L_p", "L_pbar", "p0", "q0")}
    prov["x_star"] = "analytic" if spec.constants is not None else "estimated"
    draft = ModelConstants(L, alpha, L_q, L_p, L_pbar, 1.0, 1.0, x_star, prov)
    s1 = check_s1(spec, n_pairs=min(n, 1000), t_samples=8, seed=seed + 1, constants=draft)
    tiny = float(np.nextafter(0.0, 1.0))
    p0, q0 = s1.p0_hat, s1.q0_hat
    if not p0 > 0:
        prov["p0"] = "estimated: no positive overlap observed"
    if not q0 > 0:
        prov["q0"] = "estimated: no positive overlap observed"
    return ModelConstants(L, alpha, L_q, L_p, L_pbar, min(1.0, max(p0, tiny)), min(1.0, max(q0, tiny)), x_star, prov)


@dataclass(frozen=True)
class S1Report:
    """Smallest observed overlap sums; ``worst_p`` / ``worst_q`` locate the minimisers."""

    p0_hat: float
    q0_hat: float
    worst_p: dict
    worst_q: dict

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def check_s1(
    spec: SystemSpec, n_pairs: int = 1000, t_samples: int = 8, seed: int = 0, constants: Optional[ModelConstants] = None
) -> S1Report:
    """Empirical minimum of the two overlap sums.

    For sampled ``(i1, i2, x, y, t)`` computes
    ``sum_{j in I_Pi(t,x,y)} p_{i1 j}(x) p_{i2 j}(y)`` and over ``(x, y)``
    ``sum_{s in I_q(x,y)} pbar_s(x) pbar_s(y)``.  Membership in the index
    sets allows a relative slack of 1e-9 for floating-point ties.  Times
    are ``0`` plus ``t_samples`` draws from the waiting-time law.
    """
    c = constants if constants is not None else spec.constants
    if c is None:
        raise ConfigurationError("constants are needed to evaluate the index sets", field="constants")
    gen = np.random.default_rng(seed)
    X, Y = _probe_pairs(spec, n_pairs, gen)
    rho = spec.space.dist
    d = rho(X, Y)
    slack = 1.0 + 1e-9
    ts = np.concatenate([[0.0], gen.exponential(1.0 / spec.lam, size=t_samples)])
    p_best, p_where = math.inf, {}
    for t in ts:
        tt = np.full(n_pairs, t)
        member = np.stack(
            [rho(f.evaluate(tt, X), f.evaluate(tt, Y)) <= c.L * math.exp(c.alpha * t) * d * slack for f in spec.flows],
            axis=1,
        )
        for i1 in range(spec.N):
            P1 = spec.probs.row(X, np.full(n_pairs, i1))
            for i2 in range(spec.N):
                P2 = spec.probs.row(Y, np.full(n_pairs, i2))
                tot = (P1 * P2 * member).sum(axis=1)
                k = int(np.argmin(tot))
                if tot[k] < p_best:
                    p_best = float(tot[k])
                    p_where = {"x": X[k].tolist(), "y": Y[k].tolist(), "i1": i1, "i2": i2, "t": float(t)}
    mq = np.stack([rho(q.apply(X), q.apply(Y)) <= c.L_q * d * slack for q in spec.jumps], axis=1)
    totq = (spec.probs.jump(X) * spec.probs.jump(Y) * mq).sum(axis=1)
    k = int(np.argmin(totq))
    return S1Report(p_best, float(totq[k]), p_where, {"x": X[k].tolist(), "y": Y[k].tolist()})


# ---------------------------------------------------------------------------
# invariant measure


def _start(spec, x0, xi0, gen):
    if x0 is None:
        x0 = spec.constants.x_star if spec.constants is not None else np.zeros(spec.dimension)
    x0 = as_point(x0, spec.dimension)
    if isinstance(xi0, str):
        if xi0 != "auto":
            raise ConfigurationError("xi0 must be an index or 'auto'", field="xi0")
        xi0 = draw_initial_flow(spec, x0, gen)
    if not 0 <= int(xi0) < spec.N:
        raise ConfigurationError(f"xi0 outside 0..{spec.N - 1}", field="xi0")
    return x0, int(xi0)


def invariant_states(
    spec: SystemSpec, burn_in: int, n_keep: int, thin: int = 1, x0=None, xi0=0, seed: int = 0, stream: int = 0
):
    """Thinned post-burn-in states ``(X (n_keep, d), XI (n_keep,))`` of one chain."""
    if burn_in < 0:
        raise ConfigurationError("burn_in must be >= 0", field="burn_in")
    if n_keep < 1:
        raise ConfigurationError("n_keep must be >= 1", field="n_keep")
    if thin < 1:
        raise ConfigurationError("thin must be >= 1", field="thin")
    gen = RngStream(seed, stream).generator()
    x0, xi0 = _start(spec, x0, xi0, gen)
    total = burn_in + n_keep * thin
    Xk = np.empty((n_keep, spec.dimension))
    Ik = np.empty(n_keep, dtype=np.int64)
    step, filled = 0, 0
    for blk in _run_blocks(_Engine(spec), x0[None, :], np.array([xi0]), [gen], total):
        b = len(blk["x"])
        n_idx = step + 1 + np.arange(b)  # chain step of each row
        sel = (n_idx > burn_in) & ((n_idx - burn_in) % thin == 0)
        cnt = int(sel.sum())
        Xk[filled:filled + cnt] = blk["x"][sel, 0]
        Ik[filled:filled + cnt] = blk["xi"][sel, 0]
        filled += cnt
        step += b
    return Xk, Ik


def estimate_invariant(
    spec: SystemSpec,
    burn_in: int = 1000,
    n_keep: int = 100_000,
    thin: int = 1,
    x0=None,
    xi0=0,
    seed: int = 0,
    marginal: bool = False,
    stream: int = 0,
) -> EmpiricalMeasure:
    """Empirical measure of a thinned chain after burn-in.

    The chain runs on ``RngStream(seed, stream)`` from ``(x0, xi0)`` (``x0``
    defaults to the reference point ``x*``).  ``marginal=True`` drops the
    regime index.
    """
    X, XI = invariant_states(spec, burn_in, n_keep, thin, x0, xi0, seed, stream)
    return EmpiricalMeasure.from_samples(X, None if marginal else XI, spec.space)


# ---------------------------------------------------------------------------
# law of large numbers


@dataclass
class LLNReport:
    """Running averages ``S_n(f)/n`` at the checkpoints for every seed."""

    checkpoints: list
    seeds: list
    averages: np.ndarray  # (n_seeds, n_checkpoints)
    reference: float
    observable: str = "f"
    notes: str = ""

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.averages - self.reference)

    @property
    def final_errors(self) -> np.ndarray:
        return self.errors[:, -1]

    @property
    def max_final_error(self) -> float:
        return float(np.max(self.final_errors))

    @property
    def median_errors(self) -> np.ndarray:
        return np.median(self.errors, axis=0)

    @property
    def sign_test_p(self) -> float:
        """Sign test over all (seed, consecutive checkpoint) pairs for error increases."""
        diffs = np.diff(self.errors, axis=1)
        return sign_test(int(np.sum(diffs > 0)), diffs.size)

    def to_dict(self) -> dict:
        return _clean(
            {
                "observable": self.observable,
                "checkpoints": self.checkpoints,
                "reference": self.reference,
                "max_final_error": self.max_final_error,
                "median_errors": self.median_errors,
                "sign_test_p": self.sign_test_p,
                "per_seed": [
                    {"seed": s, "averages": self.averages[k], "final_error": self.final_errors[k]}
                    for k, s in enumerate(self.seeds)
                ],
                "notes": self.notes,
            }
        )

    def write_csv(self, fh) -> None:
        """``n,value,stderr``: across-seed mean of the running average and its standard error."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "value", "stderr"])
        S = len(self.seeds)
        for k, n in enumerate(self.checkpoints):
            col = self.averages[:, k]
            se = float(np.std(col, ddof=1) / math.sqrt(S)) if S > 1 else float("nan")
            w.writerow([n, repr(float(np.mean(col))), repr(se)])


def lln_run(
    spec: SystemSpec,
    f,
    x0,
    xi0,
    n: int,
    checkpoints: Sequence[int],
    seeds: Sequence[int],
    reference: Optional[float] = None,
    ref_seed: Optional[int] = None,
    ref_burn_in: int = 1000,
    ref_n_keep: Optional[int] = None,
) -> LLNReport:
    """Ergodic averages ``(1/n) sum_{k<n} f(x_k, xi_k)`` for several seeds.

    Seed ``s`` drives ``RngStream(s, 0)``; the chains advance in lockstep but
    each reads only its own stream, so results match single-seed runs.  The
    reference ``int f d mu*`` defaults to an independent invariant estimate
    (seed ``ref_seed``, by default one more than the largest seed).
    """
    f = as_observable(f)
    checkpoints = sorted(int(c) for c in checkpoints)
    if not checkpoints or checkpoints[0] < 1 or checkpoints[-1] > n or len(set(checkpoints)) != len(checkpoints):
        raise ConfigurationError("checkpoints must be distinct integers in 1..n", field="checkpoints")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigurationError("at least one seed is required", field="seeds")
    gens = [RngStream(s, 0).generator() for s in seeds]
    starts = [_start(spec, x0, xi0, g) for g in gens]
    X = np.array([s[0] for s in starts])
    XI = np.array([s[1] for s in starts], dtype=np.int64)
    M = len(seeds)
    acc = np.asarray(f(X, XI), dtype=float)  # running sum after term k = 0
    out = np.empty((M, len(checkpoints)))
    ci = 0
    terms = 1
    while ci < len(checkpoints) and checkpoints[ci] == terms:
        out[:, ci] = acc / terms
        ci += 1
    if n > 1:
        for blk in _run_blocks(_Engine(spec), X, XI, gens, n - 1):
            b = len(blk["x"])
            vals = np.stack([f(blk["x"][r], blk["xi"][r]) for r in range(b)])
            csum = acc + np.cumsum(vals, axis=0)
            while ci < len(checkpoints) and checkpoints[ci] <= terms + b:
                out[:, ci] = csum[checkpoints[ci] - terms - 1] / checkpoints[ci]
                ci += 1
            acc = csum[-1]
            terms += b
    notes = ""
    if reference is None:
        rs = max(seeds) + 1 if ref_seed is None else ref_seed
        mu = estimate_invariant(spec, ref_burn_in, ref_n_keep or n, 1, x0, xi0 if not isinstance(xi0, str) else 0, rs)
        reference = mu.integrate(f)
        notes = f"reference from invariant estimate (seed {rs}, burn-in {ref_burn_in}, {ref_n_keep or n} states)"
    return LLNReport(checkpoints, seeds, out, float(reference), f.name, notes)


# ---------------------------------------------------------------------------
# rate fits


@dataclass
class RateFit:
    """Log-linear fit ``D_n ~ C q^n`` of Fortet-Mourier distances.

    ``noise[n]`` is the distance between two replicate ensembles of equal
    law at step ``n`` and ``noise_floor`` its median over ``n >= 1``.  Only
    points with ``noise_factor * max(noise[n], noise_floor) < D_n <
    saturation`` enter the fit.  ``gamma_sum = C / (1 - q)`` is
    the summability bookkeeping of ``gamma_n = C q^n``.
    """

    n: list
    D: list
    noise: list
    noise_floor: float
    used: list
    q: float = math.nan
    C: float = math.nan
    residual: float = math.nan
    status: str = "declined"
    gamma_sum: float = math.nan
    sign_test_p: float = math.nan
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def write_csv(self, fh) -> None:
        """``n,value,stderr`` with the replicate distance as the error column."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "value", "stderr"])
        for n, d, e in zip(self.n, self.D, self.noise):
            w.writerow([n, repr(float(d)), repr(float(e))])


def _as_init(spec, mu):
    if isinstance(mu, EmpiricalMeasure):
        return mu
    if isinstance(mu, HybridState):
        return [mu]
    return list(mu)


def rate_fit(
    spec: SystemSpec,
    mu_a,
    mu_b,
    n_max: int = 20,
    ensemble: int = 10_000,
    fm_cap: int = 2000,
    seed: int = 0,
    threads: int = 1,
    marginal: bool = False,
    noise_factor: float = 2.0,
    saturation: float = 1.0,
    invariant_burn_in: int = 1000,
) -> RateFit:
    """Fit the decay of ``D_n = FM(mu_a P^n, mu_b P^n)``.

    Parameters
    ----------
    mu_a, mu_b : EmpiricalMeasure, HybridState or list of HybridState
        Initial laws; ``mu_b="invariant"`` uses an invariant estimate with
        ``ensemble`` states.
    ensemble : int
        Trajectories per law (at least 1000).
    fm_cap : int
        Each ensemble measure is subsampled to ``fm_cap`` atoms before the
        distance is computed.
    saturation : float
        Distances at or above this level are excluded: the metric is capped
        at 2, so early distances measure the cap rather than the decay.

    Notes
    -----
    Four ensembles are simulated with disjoint stream ranges: ``A``, ``B``
    and replicates ``A'``, ``B'`` used for the noise floor.
    """
    if ensemble < 1000:
        raise ConfigurationError("ensemble must be >= 1000", field="ensemble")
    if n_max < 1:
        raise ConfigurationError("n_max must be >= 1", field="n_max")
    E = int(ensemble)
    init_a = _as_init(spec, mu_a)
    if isinstance(mu_b, str):
        if mu_b != "invariant":
            raise ConfigurationError("mu_b must be a measure, states or 'invariant'", field="mu_b")
        init_b = estimate_invariant(spec, invariant_burn_in, E, 1, None, 0, seed, stream=4 * E)
        notes = [f"mu_b: invariant estimate with {E} states (stream {4 * E})"]
    else:
        init_b = _as_init(spec, mu_b)
        notes = []
    runs = [
        ensemble_states(spec, init, n_max, E, seed, threads, stream_offset=k * E)
        for k, init in enumerate((init_a, init_b, init_a, init_b))
    ]

    def measure(run, n, tag):
        X, XI = run
        mu = EmpiricalMeasure.from_samples(X[n], None if marginal else XI[n], spec.space)
        if E > fm_cap:
            mu = subsample(mu, fm_cap, RngStream(seed, 4 * E + 1 + 4 * n + tag))
        return mu

    cap = 2 * fm_cap
    D, noise = [], []
    for n in range(n_max + 1):
        A, B, A2, B2 = (measure(runs[k], n, k) for k in range(4))
        D.append(fm_distance(A, B, cap=cap).value)
        noise.append(max(fm_distance(A, A2, cap=cap).value, fm_distance(B, B2, cap=cap).value))
    D = np.array(D)
    noise = np.array(noise)
    floor = float(np.median(noise[1:]))
    above = D > noise_factor * np.maximum(noise, floor)
    used = above & (D < saturation)
    ns = np.arange(n_max + 1)
    fit = RateFit(ns.tolist(), D.tolist(), noise.tolist(), floor, used.tolist(), notes=notes)
    if above.sum() >= 2:
        Da = D[above]
        fit.sign_test_p = sign_test(int(np.sum(np.diff(Da) > 0)), len(Da) - 1)
    if used.sum() < 2:
        fit.notes.append("fewer than two distances between the noise floor and saturation: fit declined")
        return fit
    slope, icpt = np.polyfit(ns[used], np.log(D[used]), 1)
    resid = np.log(D[used]) - (icpt + slope * ns[used])
    fit.q = float(math.exp(slope))
    fit.C = float(math.exp(icpt))
    fit.residual = float(math.sqrt(np.mean(resid**2)))
    fit.status = "fitted"
    fit.gamma_sum = fit.C / (1.0 - fit.q) if fit.q < 1 else math.inf
    if spec.constants is not None and spec.lam > spec.constants.alpha:
        c = spec.constants
        a = spec.lam * c.L * c.L_q / (spec.lam - c.alpha)
        if a < 1:
            b = lyapunov_offset(spec)
            fit.notes.append(
                f"v(x,i) = C(rho(x,x*) + 1); h(x,i) = C(rho(x,x*) + 1 + b/(1-a)) with a = {a!r}, b = {b!r}"
            )
    return fit
