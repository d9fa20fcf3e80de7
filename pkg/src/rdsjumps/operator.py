"""
The transition operator ``P`` on measures and its dual ``U`` on observables.

For a bounded observable ``f`` on ``Y x I``

    Uf(x, i) = sum_j sum_s  int_0^inf  lam e^{-lam t} p_ij(x) pbar_s(Pi_j(t, x))
                                        f(q_s(Pi_j(t, x)), j) dt,

which is one step of the chain in :mod:`rdsjumps.sim` averaged exactly over
``(j, s)`` and by quadrature over the waiting time.  ``P`` is applied to
empirical measures by Monte Carlo.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.laguerre import laggauss
from scipy.special import gammainc

from .core import HybridState, SystemSpec, as_point
from .errors import ConfigurationError, NumericError, ProbabilityError
from .measure import EmpiricalMeasure
from .observables import as_observable
from .sim import RngStream, advance_batch, as_generator, ensemble_states

__all__ = ["QuadratureSpec", "apply_dual", "apply_dual_batch", "push_forward", "iterate_dual"]

_ROW_TOL = 1e-9
_CHUNK_ROWS = 1 << 18  # (state, node) rows evaluated at once


@dataclass(frozen=True)
class QuadratureSpec:
    """Rule for ``int_0^inf lam e^{-lam t} g(t) dt``.

    Parameters
    ----------
    method : {"gauss-laguerre", "truncated-composite"}
        Gauss-Laguerre after the substitution ``u = lam t``, or a composite
        product-Simpson rule on ``[0, T]`` whose weights integrate the
        piecewise-quadratic interpolant of ``g`` exactly against the
        exponential density (robust for non-smooth integrands).
    nodes : int
        Number of nodes (rounded up to an odd count for the composite rule).
    T : float, optional
        Truncation point of the composite rule, default ``40 / lam``.  The
        tail mass ``e^{-lam T}`` is put on the last node so constants
        integrate exactly.
    """

    method: str = "gauss-laguerre"
    nodes: int = 64
    T: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("gauss-laguerre", "truncated-composite"):
            raise ConfigurationError(f"unknown quadrature method {self.method!r}", field="method")
        if int(self.nodes) < 2:
            raise ConfigurationError("quadrature needs at least 2 nodes", field="nodes")
        if self.T is not None and not self.T > 0:
            raise ConfigurationError("truncation T must be positive", field="T")

    def rule(self, lam: float):
        """Nodes ``t_k`` and weights ``w_k`` with ``sum_k w_k g(t_k)`` approximating the integral."""
        if self.method == "gauss-laguerre":
            u, w = laggauss(int(self.nodes))
            return u / lam, w
        return _composite_rule(lam, int(self.nodes), self.T if self.T is not None else 40.0 / lam)


def _composite_rule(lam, nodes, T):
    panels = max(1, (nodes - 1) // 2 + ((nodes - 1) % 2))
    h = T / (2 * panels)
    t = np.linspace(0.0, T, 2 * panels + 1)
    w = np.zeros_like(t)
    z = 2 * h * lam
    # moments int_0^{2h} lam e^{-lam s} s^k ds, shared by all panels up to e^{-lam a}
    mu0 = gammainc(1, z)
    mu1 = gammainc(2, z) / lam
    mu2 = 2.0 * gammainc(3, z) / lam**2
    c0 = (mu2 - 3 * h * mu1 + 2 * h * h * mu0) / (2 * h * h)
    c1 = (2 * h * mu1 - mu2) / (h * h)
    c2 = (mu2 - h * mu1) / (2 * h * h)
    scale = np.exp(-lam * t[0:-1:2])
    w[0:-1:2] += scale * c0
    w[1::2] += scale * c1
    w[2::2] += scale * c2
    w[-1] += np.exp(-lam * T)
    return t, w


_DEFAULT_QUAD = QuadratureSpec()


def _check_rows(P, what):
    P = np.asarray(P, dtype=float)
    if np.any(np.abs(P.sum(axis=-1) - 1.0) > _ROW_TOL) or np.any(P < -1e-12):
        raise ProbabilityError(f"{what} probabilities are not a probability vector")
    return P


def apply_dual_batch(spec: SystemSpec, f, X, I, quad: QuadratureSpec = _DEFAULT_QUAD) -> np.ndarray:
    """``Uf`` at every row of ``(X, I)``; see :func:`apply_dual`."""
    f = as_observable(f)
    X = np.asarray(X, dtype=float).reshape(len(I), spec.dimension)
    I = np.asarray(I, dtype=np.int64)
    t, w = quad.rule(spec.lam)
    Q = len(t)
    P = _check_rows(spec.probs.row(X, I), "switching")
    step = max(1, _CHUNK_ROWS // Q)
    out = np.empty(len(X))
    for lo in range(0, len(X), step):
        sl = slice(lo, lo + step)
        M = len(X[sl])
        XX = np.repeat(X[sl], Q, axis=0)
        TT = np.tile(t, M)
        acc = np.zeros((M, Q))
        for j in range(spec.N):
            pj = P[sl, j]
            if not np.any(pj > 0):
                continue
            Y = spec.flows[j].evaluate(TT, XX)
            PB = _check_rows(spec.probs.jump(Y), "jump")
            jj = np.full(M * Q, j, dtype=np.int64)
            for s in range(spec.K):
                fv = f(spec.jumps[s].apply(Y), jj)
                if not np.all(np.isfinite(fv)):
                    raise NumericError("observable returned non-finite values inside the dual operator")
                acc += pj[:, None] * (PB[:, s] * fv).reshape(M, Q)
        out[sl] = acc @ w
    return out


def apply_dual(spec: SystemSpec, f, state: HybridState, quad: QuadratureSpec = _DEFAULT_QUAD) -> float:
    """Quadrature value of ``Uf(x, i)``.

    Parameters
    ----------
    f : Observable or callable
        Batched observable ``f(x (M, d), i (M,))``.
    state : HybridState
    quad : QuadratureSpec

    Raises
    ------
    NumericError
        If ``f`` is not finite at some quadrature node.
    """
    x = as_point(state.x, spec.dimension)
    return float(apply_dual_batch(spec, f, x[None, :], np.array([state.i]), quad)[0])


def push_forward(spec: SystemSpec, mu: EmpiricalMeasure, rng, replicates: int = 1) -> EmpiricalMeasure:
    """Monte Carlo image of ``mu`` under one step of the chain.

    Every atom is advanced ``replicates`` times (default once, giving one
    image atom per input atom), and each image carries ``w / replicates``.
    The uniforms for atom ``k`` are rows ``k * replicates ...`` of a single
    ``rng.random((n * replicates, 3))`` draw.
    """
    if abs(mu.total_mass - 1.0) > 1e-9:
        raise ConfigurationError("push_forward needs a probability measure", field="mu")
    if replicates < 1:
        raise ConfigurationError("replicates must be >= 1", field="replicates")
    X = np.repeat(mu.points, replicates, axis=0)
    I = np.repeat(mu.index_array(), replicates)
    W = np.repeat(mu.weights, replicates) / replicates
    _, _, _, xn, j = advance_batch(spec, X, I, as_generator(rng))
    return EmpiricalMeasure(xn, W, j if mu.is_hybrid else None, mu.space)


def iterate_dual(
    spec: SystemSpec,
    f,
    state: HybridState,
    n: int,
    quad: QuadratureSpec = _DEFAULT_QUAD,
    mc_paths: int = 10_000,
    rng=0,
    return_stderr: bool = False,
):
    """Monte Carlo value of ``U^n f(x, i) = E f(x_n, xi_n)`` from ``state``.

    ``n = 0`` returns ``f(state)`` exactly.  Path ``k`` uses
    ``RngStream(seed, k)``; ``quad`` is accepted for symmetry with
    :func:`apply_dual` (multi-step composition is Monte Carlo only).
    """
    if n < 0:
        raise ConfigurationError("n must be >= 0", field="n")
    f = as_observable(f)
    x = as_point(state.x, spec.dimension)
    if n == 0:
        val = float(f(x[None, :], np.array([state.i]))[0])
        return (val, 0.0) if return_stderr else val
    if mc_paths < 1:
        raise ConfigurationError("mc_paths must be >= 1", field="mc_paths")
    seed = rng.seed if isinstance(rng, RngStream) else int(rng)
    X, XI = ensemble_states(spec, [HybridState(x, state.i)], n, mc_paths, seed)
    vals = f(X[-1], XI[-1])
    mean = float(np.mean(vals))
    if return_stderr:
        se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        return mean, se
    return mean
