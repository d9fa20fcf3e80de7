"""
The coupled transition kernel ``B = Q + R`` for two copies of the chain.

For states ``(x_1, i_1)``, ``(x_2, i_2)`` and a shared waiting time ``t``
let ``w^k_{js}(t) = p_{i_k j}(x_k) pbar_s(Pi_j(t, x_k))``.  The subcoupling
``Q`` moves both copies with the *same* ``(t, j, s)`` at rate

    lam e^{-lam t} min(w^1_{js}(t), w^2_{js}(t)),

so its mass is ``M = int lam e^{-lam t} m(t) dt`` with
``m(t) = sum_{js} min(w^1, w^2)``.  The remainder ``R`` is the product of
the two normalised residual laws, scaled by ``1 - M``; the marginals of
``B`` are the one-step laws of each copy.

Sampling is exact and uses rejection only: one trial decides the branch,
the residuals are sampled by proposing from each copy's own step law and
accepting with probability ``1 - min(w^1, w^2) / w^own``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import HybridState, ModelConstants, SystemSpec, as_point
from .errors import ConfigurationError, NumericError
from .operator import QuadratureSpec
from .sim import RngStream, as_generator, categorical

__all__ = [
    "CoupledState",
    "CouplingDiagnostics",
    "ContractionWindow",
    "ContractionEstimate",
    "coupled_mass",
    "coupled_mass_batch",
    "coupling_diagnostics",
    "sample_coupling",
    "couple_batch",
    "contraction_window",
    "coupling_contraction_estimate",
    "write_coupling_trace",
    "MAX_REJECTIONS",
]

MAX_REJECTIONS = 10**6
MASS_QUADRATURE = QuadratureSpec("truncated-composite", 20001)
_CHUNK_ROWS = 1 << 18  # (state, node) rows evaluated at once


@dataclass(frozen=True)
class CoupledState:
    """Both copies after one coupled step; ``coupled_flag`` is True for the ``Q`` branch."""

    first: HybridState
    second: HybridState
    coupled_flag: bool
    t: float = math.nan
    j: int = -1
    s: int = -1


@dataclass(frozen=True)
class CouplingDiagnostics:
    coupled_mass: float
    residual_bound: float
    beta: float

    def to_dict(self):
        return {"coupled_mass": self.coupled_mass, "residual_bound": self.residual_bound, "beta": self.beta}


# ---------------------------------------------------------------------------
# weights


def _weights(spec: SystemSpec, X, I, t):
    """``w[m, j, s] = p_{I_m j}(X_m) pbar_s(Pi_j(t_m, X_m))`` and the flowed points ``Y[m, j]``."""
    M = len(X)
    P = spec.probs.row(X, I)
    W = np.empty((M, spec.N, spec.K))
    Y = np.empty((M, spec.N, spec.dimension))
    for j in range(spec.N):
        Y[:, j] = spec.flows[j].evaluate(t, X)
        W[:, j, :] = P[:, j, None] * spec.probs.jump(Y[:, j])
    return W, Y


def coupled_mass_batch(spec: SystemSpec, X1, I1, X2, I2, quad: QuadratureSpec = MASS_QUADRATURE) -> np.ndarray:
    """Coupled mass ``M`` for each row pair."""
    X1 = np.asarray(X1, dtype=float).reshape(len(I1), spec.dimension)
    X2 = np.asarray(X2, dtype=float).reshape(len(I2), spec.dimension)
    I1, I2 = np.asarray(I1), np.asarray(I2)
    t, w = quad.rule(spec.lam)
    Q = len(t)
    step = max(1, _CHUNK_ROWS // Q)
    out = np.empty(len(X1))
    for lo in range(0, len(X1), step):
        sl = slice(lo, lo + step)
        M = len(X1[sl])
        TT = np.tile(t, M)
        W1, _ = _weights(spec, np.repeat(X1[sl], Q, axis=0), np.repeat(I1[sl], Q), TT)
        W2, _ = _weights(spec, np.repeat(X2[sl], Q, axis=0), np.repeat(I2[sl], Q), TT)
        m = np.minimum(W1, W2).sum(axis=(1, 2)).reshape(M, Q)
        if not np.all(np.isfinite(m)):
            raise NumericError("non-finite coupling weights", status="non-finite")
        out[sl] = m @ w
    return out


def coupled_mass(spec: SystemSpec, s1: HybridState, s2: HybridState, quad: QuadratureSpec = MASS_QUADRATURE) -> float:
    """``Q_{s1, s2}(X^2)`` by quadrature over the shared waiting time.

    The default rule is composite (the integrand has kinks wherever the
    minimum switches sides or a probability is clamped).
    """
    x1 = as_point(s1.x, spec.dimension)[None, :]
    x2 = as_point(s2.x, spec.dimension)[None, :]
    return float(coupled_mass_batch(spec, x1, [s1.i], x2, [s2.i], quad)[0])


def _beta(constants: ModelConstants, lam: float) -> float:
    return lam * constants.L * constants.L_q / (lam - constants.alpha)


def coupling_diagnostics(spec: SystemSpec, s1: HybridState, s2: HybridState, quad=MASS_QUADRATURE):
    """Coupled mass with the residual-mass bound and ``beta`` from the model constants."""
    c = spec.constants
    if c is None:
        raise ConfigurationError("model constants are required", field="constants")
    lam = spec.lam
    rho = float(spec.space.dist(np.asarray(s1.x)[None, :], np.asarray(s2.x)[None, :])[0])
    bound = (c.L_p + lam * c.L * c.L_pbar / (lam - c.alpha)) * rho + 2 * spec.N * float(s1.i != s2.i)
    return CouplingDiagnostics(coupled_mass(spec, s1, s2, quad), bound, _beta(c, lam))


# ---------------------------------------------------------------------------
# sampling


def _residual(spec, gen, own_X, own_I, oth_X, oth_I, lam, budget):
    """Sample each row from its residual law ``w^own - min(w^own, w^other)``."""
    M = len(own_X)
    out_x = np.empty_like(own_X)
    out_j = np.empty(M, dtype=np.int64)
    out_t = np.empty(M)
    out_s = np.empty(M, dtype=np.int64)
    active = np.arange(M)
    tries = 0
    while len(active):
        tries += 1
        if tries > budget:
            raise NumericError(
                f"residual rejection exceeded {budget} iterations (measure-zero residual?)", status="max-iterations"
            )
        u = gen.random((len(active), 4))
        t = -np.log1p(-u[:, 0]) / lam
        Xa, Ia = own_X[active], own_I[active]
        P = spec.probs.row(Xa, Ia)
        j = categorical(P, u[:, 1])
        y = np.empty_like(Xa)
        for k in range(spec.N):
            m = j == k
            if m.any():
                y[m] = spec.flows[k].evaluate(t[m], Xa[m])
        pb = spec.probs.jump(y)
        s = categorical(pb, u[:, 2])
        rows = np.arange(len(active))
        w_own = P[rows, j] * pb[rows, s]
        Po = spec.probs.row(oth_X[active], oth_I[active])
        yo = np.empty_like(Xa)
        for k in range(spec.N):
            m = j == k
            if m.any():
                yo[m] = spec.flows[k].evaluate(t[m], oth_X[active][m])
        w_oth = Po[rows, j] * spec.probs.jump(yo)[rows, s]
        acc = u[:, 3] < 1.0 - np.minimum(w_own, w_oth) / w_own
        if acc.any():
            idx = active[acc]
            z = np.empty((acc.sum(), spec.dimension))
            for k in range(spec.K):
                m = s[acc] == k
                if m.any():
                    z[m] = spec.jumps[k].apply(y[acc][m])
            out_x[idx] = z
            out_j[idx] = j[acc]
            out_t[idx] = t[acc]
            out_s[idx] = s[acc]
        active = active[~acc]
    return out_x, out_j, out_t, out_s


def couple_batch(spec: SystemSpec, X1, I1, X2, I2, rng, max_iter: int = MAX_REJECTIONS):
    """One draw from ``B`` for every row pair.

    Returns
    -------
    dict
        ``x1, i1, x2, i2`` (new states), ``eta1, eta2`` (jump index used by
        each copy), ``coupled`` (bool, Q branch), and for the Q branch the
        shared ``t, j, s`` (NaN / -1 elsewhere).
    """
    gen = as_generator(rng)
    X1 = np.asarray(X1, dtype=float).reshape(len(I1), spec.dimension)
    X2 = np.asarray(X2, dtype=float).reshape(len(I2), spec.dimension)
    I1 = np.asarray(I1, dtype=np.int64)
    I2 = np.asarray(I2, dtype=np.int64)
    M = len(X1)
    lam = spec.lam
    u = gen.random((M, 3))
    t = -np.log1p(-u[:, 0]) / lam
    W1, Y1 = _weights(spec, X1, I1, t)
    W2, Y2 = _weights(spec, X2, I2, t)
    mn = np.minimum(W1, W2).reshape(M, -1)
    m = mn.sum(axis=1)
    # equal states have m(t) = 1 exactly in law; guard against rounding
    same = np.all(X1 == X2, axis=1) & (I1 == I2)
    coupled = (u[:, 1] < m) | same
    out = {
        "x1": np.empty_like(X1), "i1": np.empty(M, dtype=np.int64),
        "x2": np.empty_like(X2), "i2": np.empty(M, dtype=np.int64),
        "eta1": np.empty(M, dtype=np.int64), "eta2": np.empty(M, dtype=np.int64),
        "coupled": coupled,
        "t": np.full(M, np.nan), "j": np.full(M, -1, dtype=np.int64), "s": np.full(M, -1, dtype=np.int64),
    }
    c = np.flatnonzero(coupled)
    if len(c):
        js = categorical(mn[c] / m[c, None], u[c, 2], check=False)
        j, s = js // spec.K, js % spec.K
        for k in range(spec.K):
            sel = s == k
            if sel.any():
                rows = c[sel]
                out["x1"][rows] = spec.jumps[k].apply(Y1[rows, j[sel]])
                out["x2"][rows] = spec.jumps[k].apply(Y2[rows, j[sel]])
        out["i1"][c] = j
        out["i2"][c] = j
        out["t"][c], out["j"][c], out["s"][c] = t[c], j, s
        out["eta1"][c] = out["eta2"][c] = s
    r = np.flatnonzero(~coupled)
    if len(r):
        x, jj, _, ss = _residual(spec, gen, X1[r], I1[r], X2[r], I2[r], lam, max_iter)
        out["x1"][r], out["i1"][r], out["eta1"][r] = x, jj, ss
        x, jj, _, ss = _residual(spec, gen, X2[r], I2[r], X1[r], I1[r], lam, max_iter)
        out["x2"][r], out["i2"][r], out["eta2"][r] = x, jj, ss
    return out


def sample_coupling(spec: SystemSpec, s1: HybridState, s2: HybridState, rng, max_iter: int = MAX_REJECTIONS):
    """One exact draw from the coupled kernel ``B_{s1, s2}``.

    Raises
    ------
    NumericError
        If the residual rejection loop runs past ``max_iter`` trials.
    """
    x1 = as_point(s1.x, spec.dimension)[None, :]
    x2 = as_point(s2.x, spec.dimension)[None, :]
    o = couple_batch(spec, x1, [s1.i], x2, [s2.i], rng, max_iter)
    return CoupledState(
        HybridState(o["x1"][0], int(o["i1"][0])),
        HybridState(o["x2"][0], int(o["i2"][0])),
        bool(o["coupled"][0]),
        float(o["t"][0]),
        int(o["j"][0]),
        int(o["s"][0]),
    )


# ---------------------------------------------------------------------------
# contraction


@dataclass(frozen=True)
class ContractionWindow:
    """Waiting-time window ``A`` where ``L L_q e^{alpha t} < beta`` and its mass ``r``."""

    beta: float
    T0: float
    interval: tuple
    r: float
    skipped: bool = False
    note: str = ""


def contraction_window(constants: ModelConstants, lam: float) -> ContractionWindow:
    """The window ``A`` and ``r = int_A lam e^{-lam t} dt``.

    For ``alpha >= 0`` the window is ``(0, T0)`` and for ``alpha < 0`` it is
    ``(T0, inf)``, with ``T0 = ln(beta / (L L_q)) / alpha``.
    """
    if not lam > constants.alpha:
        return ContractionWindow(math.nan, math.nan, (), 0.0, True, "lambda <= alpha: beta undefined")
    beta = _beta(constants, lam)
    LLq = constants.L * constants.L_q
    a = constants.alpha
    if LLq == 0.0:
        return ContractionWindow(beta, math.nan, (), 0.0, True, "L*L_q = 0: the contraction event is empty")
    if a == 0.0:
        if LLq < beta:
            return ContractionWindow(beta, math.inf, (0.0, math.inf), 1.0)
        warnings.warn("L*L_q >= beta with alpha = 0: r = 0, positivity check skipped", stacklevel=2)
        return ContractionWindow(beta, math.nan, (), 0.0, True, "L*L_q >= beta with alpha = 0")
    T0 = math.log(beta / LLq) / a
    if a > 0:
        if T0 <= 0:
            return ContractionWindow(beta, T0, (), 0.0, True, "empty window (T0 <= 0)")
        return ContractionWindow(beta, T0, (0.0, T0), -math.expm1(-lam * T0))
    start = max(T0, 0.0)
    return ContractionWindow(beta, T0, (start, math.inf), math.exp(-lam * start))


@dataclass
class ContractionEstimate:
    """Per-step contraction statistics of the coupled chain.

    ``q_ratio[k]`` is ``sum(d_{k+1} 1{Q}) / sum(d_k)``, the Monte Carlo value
    of ``int d dQ / d``; ``conditional_ratio`` divides by the Q-branch
    ``d_k`` only, and ``unconditional_ratio`` uses all transitions.
    ``beta_hat`` is the largest ``q_ratio``; steps where every pair has
    already met are reported as NaN.
    """

    q_ratio: list
    conditional_ratio: list
    unconditional_ratio: list
    q_fraction: list
    beta_hat: float
    pair_ratios: np.ndarray
    beta: float | None = None
    contraction_frequency: float | None = None
    contraction_stderr: float | None = None
    positivity_bound: float | None = None
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def clean(v):
            return [None if not np.isfinite(x) else float(x) for x in v]

        return {
            "beta_hat": None if not np.isfinite(self.beta_hat) else self.beta_hat,
            "beta": self.beta,
            "q_ratio": clean(self.q_ratio),
            "conditional_ratio": clean(self.conditional_ratio),
            "unconditional_ratio": clean(self.unconditional_ratio),
            "q_fraction": clean(self.q_fraction),
            "pair_ratio_max": None if not np.any(np.isfinite(self.pair_ratios)) else float(np.nanmax(self.pair_ratios)),
            "contraction_frequency": self.contraction_frequency,
            "contraction_stderr": self.contraction_stderr,
            "positivity_bound": self.positivity_bound,
        }


def _hybrid_d(spec, Xa, Ia, Xb, Ib):
    return spec.space.dist(Xa, Xb) + (Ia != Ib)


def _ratio(num, den):
    return num / den if den > 0 else math.nan


def coupling_contraction_estimate(
    spec: SystemSpec,
    pairs,
    n_steps: int = 1,
    n_rep: int = 1000,
    seed: int = 0,
    keep_trace: bool = False,
) -> ContractionEstimate:
    """Run ``n_rep`` coupled chains from each pair for ``n_steps`` steps.

    Pair ``p`` draws from ``RngStream(seed, p)``.  When model constants are
    available the first step is also scored against the contraction event
    ``d(u, v) < beta d(x, y)`` on the Q branch and compared with the lower
    bound ``p0 q0 r``.
    """
    if n_rep < 1:
        raise ConfigurationError("n_rep must be >= 1", field="n_rep")
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1", field="n_steps")
    pairs = list(pairs)
    num_q = np.zeros(n_steps)
    den_all = np.zeros(n_steps)
    den_q = np.zeros(n_steps)
    num_all = np.zeros(n_steps)
    n_q = np.zeros(n_steps)
    n_tot = np.zeros(n_steps)
    pair_ratios = np.full(len(pairs), np.nan)
    hits, trials = 0, 0
    beta = window = None
    if spec.constants is not None and spec.lam > spec.constants.alpha:
        window = contraction_window(spec.constants, spec.lam)
        beta = window.beta
    trace = []
    for p, (a, b) in enumerate(pairs):
        gen = RngStream(seed, p).generator()
        X1 = np.repeat(as_point(a.x, spec.dimension)[None, :], n_rep, axis=0)
        X2 = np.repeat(as_point(b.x, spec.dimension)[None, :], n_rep, axis=0)
        I1 = np.full(n_rep, a.i, dtype=np.int64)
        I2 = np.full(n_rep, b.i, dtype=np.int64)
        for k in range(n_steps):
            d0 = _hybrid_d(spec, X1, I1, X2, I2)
            o = couple_batch(spec, X1, I1, X2, I2, gen)
            d1 = _hybrid_d(spec, o["x1"], o["i1"], o["x2"], o["i2"])
            q = o["coupled"]
            num_q[k] += d1[q].sum()
            den_all[k] += d0.sum()
            den_q[k] += d0[q].sum()
            num_all[k] += d1.sum()
            n_q[k] += q.sum()
            n_tot[k] += n_rep
            if k == 0:
                pair_ratios[p] = _ratio(d1[q].sum(), d0.sum())
                if beta is not None and d0[0] > 0:
                    hits += int(np.sum(q & (d1 < beta * d0)))
                    trials += n_rep
            if keep_trace:
                for r in range(n_rep):
                    trace.append((p, r, k + 1, bool(q[r]), float(d0[r]), float(d1[r]), o["t"][r], int(o["j"][r]), int(o["s"][r])))
            X1, I1, X2, I2 = o["x1"], o["i1"], o["x2"], o["i2"]
    q_ratio = [_ratio(n, d) for n, d in zip(num_q, den_all)]
    finite = [v for v in q_ratio if np.isfinite(v)]
    est = ContractionEstimate(
        q_ratio=q_ratio,
        conditional_ratio=[_ratio(n, d) for n, d in zip(num_q, den_q)],
        unconditional_ratio=[_ratio(n, d) for n, d in zip(num_all, den_all)],
        q_fraction=[_ratio(n, d) for n, d in zip(n_q, n_tot)],
        beta_hat=max(finite) if finite else math.nan,
        pair_ratios=pair_ratios,
        beta=beta,
        trace=trace,
    )
    if trials:
        freq = hits / trials
        est.contraction_frequency = freq
        est.contraction_stderr = math.sqrt(max(freq * (1 - freq), 1.0 / trials) / trials)
        c = spec.constants
        est.positivity_bound = c.p0 * c.q0 * window.r if window is not None else None
    return est


def write_coupling_trace(trace, fh) -> None:
    """CSV ``pair,rep,step,branch,d_before,d_after,t,j,s``; ``t,j,s`` are blank on the R branch."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["pair", "rep", "step", "branch", "d_before", "d_after", "t", "j", "s"])
    for p, r, k, q, d0, d1, t, j, s in trace:
        if q:
            w.writerow([p, r, k, "Q", repr(d0), repr(d1), repr(float(t)), j, s])
        else:
            w.writerow([p, r, k, "R", repr(d0), repr(d1), "", "", ""])
