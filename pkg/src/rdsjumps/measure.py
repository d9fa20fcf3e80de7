"""
Finitely supported probability measures and the Fortet-Mourier distance.

The Fortet-Mourier (bounded-Lipschitz) distance is

    FM(mu1, mu2) = sup { sum_i c_i f(z_i) : |f| <= 1, Lip(f) <= 1 },

where ``c = mu1 - mu2`` on the merged support ``{z_i}``.  Only the values of
``f`` on the support matter (any feasible assignment extends to the whole
space by a capped McShane extension), so the supremum is a finite linear
program in ``f_i``, solved here with the HiGHS dual simplex from SciPy.

Pairs at distance >= 2 contribute no constraint, since ``|f| <= 1`` already
gives ``|f_a - f_b| <= 2``.  On the real line (Euclidean or weighted-max
metric, optionally with a regime index) the pairwise constraints are implied
by a sparse set of neighbour constraints, which keeps large supports cheap.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import HybridState, StateSpace, as_batch
from .errors import CapacityError, ConfigurationError, NumericError

__all__ = [
    "EmpiricalMeasure",
    "FMResult",
    "fm_distance",
    "fm_oracle_grid",
    "subsample",
    "pairwise_distance",
    "DEFAULT_FM_CAP",
]

DEFAULT_FM_CAP = 4000
_MASS_TOL = 1e-9
_ZERO_MASS = 1e-15
_WITNESS_TOL = 1e-8


def _merge(points, index, weights):
    """Sort atoms lexicographically and sum the weights of equal locations."""
    n, d = points.shape
    keys = [points[:, k] for k in range(d - 1, -1, -1)]
    if index is not None:
        keys.append(index)
    order = np.lexsort(keys) if n else np.zeros(0, dtype=np.int64)
    pts, w = points[order], weights[order]
    idx = index[order] if index is not None else None
    if n <= 1:
        return pts, idx, w
    same = np.all(pts[1:] == pts[:-1], axis=1)
    if idx is not None:
        same &= idx[1:] == idx[:-1]
    if not same.any():
        return pts, idx, w
    start = np.concatenate([[True], ~same])
    group = np.cumsum(start) - 1
    merged = np.zeros(group[-1] + 1)
    np.add.at(merged, group, w)
    return pts[start], (idx[start] if idx is not None else None), merged


class EmpiricalMeasure:
    """A weighted finite set of atoms on ``Y`` or on ``Y x I``.

    Parameters
    ----------
    points : array_like, shape (n, d)
        Atom locations.
    weights : array_like, shape (n,), optional
        Positive weights summing to 1 within 1e-9 (uniform if omitted).
    index : array_like of int, shape (n,), optional
        Regime index of each atom.  Measures with an index live on the
        hybrid space and use ``d = rho + [i != j]``; without one they live on
        ``Y`` and use ``rho`` alone.
    space : StateSpace, optional
        Defaults to Euclidean on ``R^d``.

    Atoms at equal locations are merged on construction, so ``len(mu)`` is
    the number of distinct atoms.
    """

    def __init__(self, points, weights=None, index=None, space: StateSpace | None = None):
        if space is None:
            d = np.asarray(points, dtype=float).reshape(len(points), -1).shape[1] if len(points) else 1
            space = StateSpace(d)
        pts = as_batch(points, space.dimension) if len(points) else np.zeros((0, space.dimension))
        n = len(pts)
        if n == 0:
            raise ConfigurationError("a measure needs at least one atom", field="points")
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if w.shape != (n,):
            raise ConfigurationError("one weight per atom required", field="weights")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ConfigurationError("weights must be positive and finite", field="weights")
        if abs(math.fsum(w) - 1.0) > _MASS_TOL:
            raise ConfigurationError(f"weights sum to {math.fsum(w)!r}, expected 1", field="weights")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("atom locations must be finite", field="points")
        idx = None
        if index is not None:
            idx = np.asarray(index).reshape(-1)
            if idx.shape != (n,) or np.any(idx < 0) or np.any(idx != np.round(idx)):
                raise ConfigurationError("index must hold one nonnegative integer per atom", field="index")
            idx = idx.astype(np.int64)
        self.points, self.index, self.weights = _merge(pts, idx, w)
        self.space = space

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_samples(cls, X, XI=None, space: StateSpace | None = None) -> "EmpiricalMeasure":
        """Uniform-weight measure of the sample rows ``X`` (with regimes ``XI``)."""
        X = np.asarray(X, dtype=float)
        return cls(X, None, XI, space)

    @classmethod
    def from_states(cls, states, weights=None, space: StateSpace | None = None) -> "EmpiricalMeasure":
        states = list(states)
        if not states:
            raise ConfigurationError("a measure needs at least one atom", field="points")
        X = np.array([s.x for s in states], dtype=float)
        XI = np.array([s.i for s in states], dtype=np.int64)
        return cls(X, weights, XI, space)

    @classmethod
    def dirac(cls, x, i=None, space: StateSpace | None = None) -> "EmpiricalMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x[None, :], [1.0], None if i is None else [i], space)

    # -- basic properties -------------------------------------------------
    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        kind = "hybrid" if self.is_hybrid else "marginal"
        return f"EmpiricalMeasure({len(self)} atoms, d={self.dimension}, {kind})"

    @property
    def is_hybrid(self) -> bool:
        return self.index is not None

    @property
    def dimension(self) -> int:
        return self.space.dimension

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def index_array(self) -> np.ndarray:
        """Regime indices, zeros for a measure on ``Y``."""
        return self.index if self.index is not None else np.zeros(len(self), dtype=np.int64)

    def states(self) -> list:
        return [HybridState(p, int(i)) for p, i in zip(self.points, self.index_array())]

    def marginal(self) -> "EmpiricalMeasure":
        """The ``Y``-marginal (regime index dropped, equal points merged)."""
        return EmpiricalMeasure(self.points, self.weights, None, self.space)

    def integrate(self, f) -> float:
        """``sum_k w_k f(x_k, i_k)`` for a batched observable ``f(x, i)``."""
        vals = np.asarray(f(self.points, self.index_array()), dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise NumericError("observable returned non-finite values")
        return float(np.dot(self.weights, vals))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def moment(self, k: int = 2) -> np.ndarray:
        return self.weights @ self.points**k

    def equals(self, other: "EmpiricalMeasure") -> bool:
        if self.is_hybrid != other.is_hybrid:
            return False
        same_idx = (not self.is_hybrid) or np.array_equal(self.index, other.index)
        return same_idx and np.array_equal(self.points, other.points) and np.array_equal(self.weights, other.weights)

    # -- io -----------------------------------------------------------------
    def to_csv(self, fh) -> None:
        """Write ``weight,x_0,...,x_{d-1}[,xi]`` rows."""
        w = csv.writer(fh, lineterminator="\n")
        header = ["weight"] + [f"x_{k}" for k in range(self.dimension)]
        if self.is_hybrid:
            header.append("xi")
        w.writerow(header)
        for k in range(len(self)):
            row = [repr(float(self.weights[k]))] + [repr(float(v)) for v in self.points[k]]
            if self.is_hybrid:
                row.append(int(self.index[k]))
            w.writerow(row)

    @classmethod
    def from_csv(cls, fh, space: StateSpace | None = None, normalize: bool = False) -> "EmpiricalMeasure":
        """Read a measure written by :meth:`to_csv`.

        ``normalize=True`` rescales the weights to unit mass (useful for
        hand-written files).
        """
        rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "weight":
            raise ConfigurationError("measure file must start with a 'weight,...' header", field="measure")
        header = [h.strip() for h in rows[0]]
        hybrid = header[-1] == "xi"
        d = len(header) - 1 - int(hybrid)
        data = [r for r in rows[1:] if r]
        try:
            arr = np.array([[float(v) for v in r] for r in data], dtype=float)
        except ValueError as exc:
            raise ConfigurationError(f"bad measure row: {exc}", field="measure") from None
        if arr.ndim != 2 or arr.shape[1] != len(header):
            raise ConfigurationError("ragged measure file", field="measure")
        w = arr[:, 0]
        if normalize:
            w = w / w.sum()
        space = space or StateSpace(d)
        return cls(arr[:, 1:1 + d], w, arr[:, -1].astype(np.int64) if hybrid else None, space)


# ---------------------------------------------------------------------------
# distances


def pairwise_distance(space: StateSpace, pa, ia, pb, ib) -> np.ndarray:
    """Matrix of ``d(a_k, b_l)``; the index term is skipped when ``ia`` is None."""
    D = space.dist(pa[:, None, :], pb[None, :, :])
    if ia is not None:
        D = D + (ia[:, None] != ib[None, :])
    return D


def _edges_line(pts, idx):
    """Neighbour edges implying every pairwise constraint on a line.

    Within a regime class consecutive points suffice (distances add up along
    the line); across classes each point needs its nearest neighbour on the
    left and on the right in every other class.
    """
    x = pts[:, 0]
    idx = np.zeros(len(x), dtype=np.int64) if idx is None else idx
    classes = np.unique(idx)
    members = {c: np.flatnonzero(idx == c) for c in classes}
    for c in classes:
        members[c] = members[c][np.argsort(x[members[c]], kind="stable")]
    rows, cols = [], []
    for c in classes:
        m = members[c]
        rows.append(m[:-1])
        cols.append(m[1:])
        for c2 in classes:
            if c2 == c:
                continue
            m2 = members[c2]
            xs = x[m2]
            pos = np.searchsorted(xs, x[m], side="left")
            right = pos < len(m2)
            rows.append(m[right])
            cols.append(m2[pos[right]])
            left = pos > 0
            rows.append(m[left])
            cols.append(m2[pos[left] - 1])
    a = np.concatenate(rows)
    b = np.concatenate(cols)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keep = lo != hi
    pairs = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def _edges_all(space, pts, idx, block=512):
    """All pairs at distance < 2."""
    n = len(pts)
    A, B, Dv = [], [], []
    for s in range(0, n, block):
        e = min(n, s + block)
        D = pairwise_distance(space, pts[s:e], None if idx is None else idx[s:e], pts, idx)
        r, c = np.nonzero(D < 2.0)
        r = r + s
        keep = r < c
        A.append(r[keep])
        B.append(c[keep])
        Dv.append(D[r[keep] - s, c[keep]])
    return np.concatenate(A), np.concatenate(B), np.concatenate(Dv)


def _violated_pairs(space, pts, idx, f, tol, limit, block=512):
    """Pairs whose Lipschitz constraint ``f`` breaks by more than ``tol`` (worst first)."""
    A, B, V, Dv = [], [], [], []
    for s in range(0, len(pts), block):
        e = min(len(pts), s + block)
        D = pairwise_distance(space, pts[s:e], None if idx is None else idx[s:e], pts, idx)
        gap = np.abs(f[s:e, None] - f[None, :]) - D
        r, cidx = np.nonzero(gap > tol)
        keep = r + s < cidx
        A.append(r[keep] + s)
        B.append(cidx[keep])
        V.append(gap[r[keep], cidx[keep]])
        Dv.append(D[r[keep], cidx[keep]])
    a, b, v, dv = (np.concatenate(z) for z in (A, B, V, Dv))
    order = np.argsort(-v, kind="stable")[:limit]
    return a[order], b[order], dv[order]


def _knn_edges(space, pts, idx, k=8, block=512):
    A, B, Dv = [], [], []
    n = len(pts)
    k = min(k, n - 1)
    for s in range(0, n, block):
        e = min(n, s + block)
        D = pairwise_distance(space, pts[s:e], None if idx is None else idx[s:e], pts, idx)
        D[np.arange(e - s), np.arange(s, e)] = np.inf
        nn = np.argpartition(D, k - 1, axis=1)[:, :k]
        rows = np.repeat(np.arange(s, e), k)
        cols = nn.reshape(-1)
        A.append(rows)
        B.append(cols)
        Dv.append(D[rows - s, cols])
    a, b, dv = np.concatenate(A), np.concatenate(B), np.concatenate(Dv)
    return a, b, dv


def _solve_generated(c, space, pts, idx, max_rounds=50):
    """Constraint generation: neighbour edges first, then add violated pairs until feasible."""
    a, b, dab = _knn_edges(space, pts, idx)
    near = dab < 2.0
    a, b, dab = a[near], b[near], dab[near]
    for _ in range(max_rounds):
        f = np.clip(_solve_lp(c, a, b, dab), -1.0, 1.0)
        na, nb, nd = _violated_pairs(space, pts, idx, f, 1e-12, limit=4 * len(pts))
        if len(na) == 0:
            return f
        a, b, dab = np.concatenate([a, na]), np.concatenate([b, nb]), np.concatenate([dab, nd])
    raise NumericError("FM constraint generation did not converge", status="max-rounds")


def _solve_lp(c, a, b, dab):
    m, E = len(c), len(a)
    if E:
        data = np.concatenate([np.ones(E), -np.ones(E), -np.ones(E), np.ones(E)])
        rows = np.concatenate([np.arange(E), np.arange(E), np.arange(E, 2 * E), np.arange(E, 2 * E)])
        cols = np.concatenate([a, b, a, b])
        A_ub = sparse.csr_matrix((data, (rows, cols)), shape=(2 * E, m))
        b_ub = np.concatenate([dab, dab])
    else:
        A_ub, b_ub = None, None
    res = linprog(
        -c,
        A_ub=A_ub,
        b_ub=b_ub,
        bounds=[(-1.0, 1.0)] * m,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0 or res.x is None:
        raise NumericError(f"FM linear program failed: {res.message}", status=int(res.status))
    return np.asarray(res.x, dtype=float)


def _witness_violation(space, pts, idx, f, block=512):
    worst = float(np.max(np.abs(f)) - 1.0)
    for s in range(0, len(pts), block):
        e = min(len(pts), s + block)
        D = pairwise_distance(space, pts[s:e], None if idx is None else idx[s:e], pts, idx)
        worst = max(worst, float(np.max(np.abs(f[s:e, None] - f[None, :]) - D)))
    return max(worst, 0.0)


@dataclass(frozen=True)
class FMResult:
    """Fortet-Mourier distance with the optimal test function on the support.

    ``witness`` holds ``f`` on ``support`` (the merged support of both
    measures, after dropping atoms whose signed mass cancels), ``status`` is
    ``"optimal"`` or ``"tolerance-limited"`` when the witness violates the
    constraints by more than 1e-8.
    """

    value: float
    witness: np.ndarray
    support: np.ndarray
    support_index: np.ndarray | None
    status: str
    support_sizes: tuple
    max_violation: float = 0.0

    def to_dict(self) -> dict:
        return {"value": self.value, "status": self.status, "support_sizes": list(self.support_sizes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _signed_support(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure):
    if mu1.is_hybrid != mu2.is_hybrid:
        raise ConfigurationError("cannot compare a hybrid measure with a Y-marginal one", field="measure")
    if mu1.dimension != mu2.dimension:
        raise ConfigurationError("measures live in different dimensions", field="measure")
    pts = np.vstack([mu1.points, mu2.points])
    idx = np.concatenate([mu1.index, mu2.index]) if mu1.is_hybrid else None
    c = np.concatenate([mu1.weights, -mu2.weights])
    return _merge(pts, idx, c)


def fm_distance(
    mu1: EmpiricalMeasure,
    mu2: EmpiricalMeasure,
    cap: int = DEFAULT_FM_CAP,
    method: str = "auto",
) -> FMResult:
    """Fortet-Mourier distance between two empirical measures.

    Parameters
    ----------
    mu1, mu2 : EmpiricalMeasure
        Both hybrid or both on ``Y``; the metric of ``mu1.space`` is used.
    cap : int
        Maximum combined support size (before cancellation).
    method : {"auto", "dense"}
        ``"auto"`` uses neighbour constraints on the real line and constraint
        generation (nearest neighbours, then violated pairs until the witness
        is feasible) otherwise; ``"dense"`` always uses all pairs.

    Returns
    -------
    FMResult
    """
    if method not in ("auto", "dense"):
        raise ConfigurationError(f"unknown FM method {method!r}", field="method")
    sizes = (len(mu1), len(mu2))
    if sizes[0] + sizes[1] > cap:
        raise CapacityError(
            f"combined support {sizes[0] + sizes[1]} exceeds the cap {cap}; subsample the measures first"
        )
    space = mu1.space
    pts, idx, c = _signed_support(mu1, mu2)
    keep = np.abs(c) >= _ZERO_MASS
    pts, c = pts[keep], c[keep]
    idx = idx[keep] if idx is not None else None
    if len(c) == 0:
        return FMResult(0.0, np.zeros(0), pts, idx, "optimal", sizes)
    # canonical orientation makes the result exactly symmetric in (mu1, mu2)
    flip = c[0] < 0
    if flip:
        c = -c
    if method == "auto" and space.line_scale is not None:
        a, b = _edges_line(pts, idx)
        dab = space.dist(pts[a], pts[b])
        if idx is not None:
            dab = dab + (idx[a] != idx[b])
        near = dab < 2.0
        a, b, dab = a[near], b[near], dab[near]
        f = _solve_lp(c, a, b, dab)
    elif method == "auto" and len(c) > 2:
        f = _solve_generated(c, space, pts, idx)
    else:
        a, b, dab = _edges_all(space, pts, idx)
        f = _solve_lp(c, a, b, dab)
    f = np.clip(f, -1.0, 1.0)
    value = max(float(np.dot(c, f)), 0.0)
    viol = _witness_violation(space, pts, idx, f)
    status = "optimal" if viol <= _WITNESS_TOL else "tolerance-limited"
    if flip:
        f = -f
    return FMResult(value, f, pts, idx, status, sizes, viol)


def fm_oracle_grid(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure, resolution: float = 1e-3) -> float:
    """Grid maximization of the FM objective for supports of at most three atoms.

    Test functions take values on ``{-1, -1 + res, ..., 1}``.  Because the
    signed masses sum to zero, an optimal ``f`` may be shifted until its
    largest value is 1, so one coordinate is pinned at 1 (each choice in
    turn), one is scanned over the grid, and the last is set to the best grid
    value inside its feasible interval.  The result is a lower bound on the
    exact optimum, within ``2 * res * sum|c|`` of it.
    """
    if not resolution <= 1e-2 or not resolution > 0:
        raise ConfigurationError("resolution must lie in (0, 1e-2]", field="resolution")
    pts, idx, c = _signed_support(mu1, mu2)
    m = len(c)
    if m > 3:
        raise CapacityError(f"grid oracle handles at most 3 atoms, got {m}")
    if m == 1:
        return abs(float(c[0]))  # zero for probability measures
    D = pairwise_distance(mu1.space, pts, idx, pts, idx)
    n_grid = int(round(2.0 / resolution))
    grid = -1.0 + resolution * np.arange(n_grid + 1)
    eps = 1e-12
    best = 0.0
    for k in range(m):
        rest = [r for r in range(m) if r != k]
        a = rest[0]
        fa = grid[np.abs(grid - 1.0) <= D[k, a] + eps]
        if m == 2:
            best = max(best, float(np.max(c[k] + c[a] * fa)))
            continue
        bb = rest[1]
        lo = np.maximum.reduce([np.full_like(fa, -1.0), 1.0 - D[k, bb] + 0 * fa, fa - D[a, bb]])
        hi = np.minimum.reduce([np.full_like(fa, 1.0), 1.0 + D[k, bb] + 0 * fa, fa + D[a, bb]])
        klo = np.ceil((lo + 1.0) / resolution - eps).astype(np.int64)
        khi = np.floor((hi + 1.0) / resolution + eps).astype(np.int64)
        ok = klo <= khi
        if not ok.any():
            continue
        kb = np.where(c[bb] > 0, khi, klo)[ok]
        fb = -1.0 + resolution * kb
        best = max(best, float(np.max(c[k] + c[a] * fa[ok] + c[bb] * fb)))
    return best


def subsample(mu: EmpiricalMeasure, m: int, rng) -> EmpiricalMeasure:
    """Draw ``m`` atoms with replacement by weight; each draw gets mass ``1/m``."""
    from .sim import as_generator, draw_by_weights

    if m < 1:
        raise ConfigurationError("m must be >= 1", field="m")
    gen = as_generator(rng)
    pick = draw_by_weights(mu.weights, gen.random(m))
    counts = np.bincount(pick, minlength=len(mu))
    sel = np.flatnonzero(counts)
    return EmpiricalMeasure(
        mu.points[sel], counts[sel] / m, mu.index[sel] if mu.is_hybrid else None, mu.space
    )
