"""
Domain types for random dynamical systems with randomly chosen jumps.

A system ``(Pi, q, p)`` consists of ``N`` semiflows ``Pi_j`` acting on a
finite-dimensional state space ``Y``, ``K`` jump maps ``q_s``, place-dependent
switching probabilities ``p_ij(x)``, jump probabilities ``pbar_s(x)``, and the
intensity ``lam`` of the exponential waiting times between jumps.

All model callables are *batched*: they take a leading batch axis and must act
row by row (the result for one row may not depend on the other rows).  This is
what makes ensemble results independent of how trajectories are split across
workers.

Flow and jump indices are 0-based throughout the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "StateSpace",
    "Semiflow",
    "ClosedFormFlow",
    "AffineFlow",
    "ODEFlow",
    "JumpMap",
    "AffineJump",
    "PlaceDependentProbabilities",
    "ModelConstants",
    "SystemSpec",
    "HybridState",
    "Check",
    "ValidationReport",
    "hybrid_distance",
    "evaluate_flow",
    "validate_system",
    "as_point",
    "as_batch",
]


def as_point(x, dimension: int) -> np.ndarray:
    """Return ``x`` as a float array of shape ``(dimension,)``."""
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size == 1 and dimension > 1:
        arr = np.full(dimension, float(arr[0]))
    if arr.shape != (dimension,):
        raise ConfigurationError(
            f"point has {arr.size} coordinates, space has dimension {dimension}", field="x"
        )
    return arr


def as_batch(x, dimension: int) -> np.ndarray:
    """Return ``x`` as a float array of shape ``(M, dimension)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        arr = arr.reshape(-1, dimension) if dimension > 1 else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dimension:
        raise ConfigurationError(f"expected points of dimension {dimension}", field="x")
    return arr


# ---------------------------------------------------------------------------
# metrics


def _euclidean(a, b):
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if diff.shape[-1] == 1:
        return np.abs(diff[..., 0])
    return np.sqrt(np.sum(diff * diff, axis=-1))


class _WeightedMax:
    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ConfigurationError("metric weights must be positive", field="metric")

    def __call__(self, a, b):
        diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
        return np.max(diff * self.weights, axis=-1)


@dataclass(frozen=True)
class StateSpace:
    """The space ``Y = R^d`` with a metric ``rho``.

    Parameters
    ----------
    dimension : int
        Number of coordinates.
    metric : {"euclidean", "weighted_max"} or callable
        Built-in metric name, or a batched callable ``rho(a, b)`` acting on the
        last axis.
    weights : sequence of float, optional
        Coordinate weights of the ``"weighted_max"`` metric (default all ones).
    bounded_hint : float, optional
        Half-width of the box ``[-R, R]^d`` used to draw probe points in
        sampling diagnostics (default 10).
    """

    dimension: int = 1
    metric: object = "euclidean"
    weights: Optional[tuple] = None
    bounded_hint: Optional[float] = None
    _rho: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ConfigurationError("dimension must be a positive integer", field="dimension")
        object.__setattr__(self, "dimension", int(self.dimension))
        if self.metric == "euclidean":
            rho = _euclidean
        elif self.metric == "weighted_max":
            w = self.weights if self.weights is not None else (1.0,) * self.dimension
            if len(w) != self.dimension:
                raise ConfigurationError("one weight per coordinate required", field="weights")
            object.__setattr__(self, "weights", tuple(float(v) for v in w))
            rho = _WeightedMax(self.weights)
        elif callable(self.metric):
            rho = self.metric
        else:
            raise ConfigurationError(f"unknown metric {self.metric!r}", field="metric")
        object.__setattr__(self, "_rho", rho)

    def dist(self, a, b) -> np.ndarray:
        """Batched distance ``rho(a, b)`` over the last axis."""
        return self._rho(a, b)

    @property
    def line_scale(self) -> Optional[float]:
        """``w`` if the metric is ``w * |x - y|`` on the real line, else None."""
        if self.dimension != 1:
            return None
        if self.metric == "euclidean":
            return 1.0
        if self.metric == "weighted_max":
            return self.weights[0]
        return None

    @property
    def probe_radius(self) -> float:
        return float(self.bounded_hint) if self.bounded_hint else 10.0


# ---------------------------------------------------------------------------
# semiflows and jumps


class Semiflow:
    """A semidynamical system ``Pi(t, x)``.

    Subclasses implement :meth:`evaluate` on batches: ``t`` of shape ``(M,)``
    and ``x`` of shape ``(M, d)``.
    """

    kind = "closed-form"

    def evaluate(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ClosedFormFlow(Semiflow):
    """Semiflow given by an explicit batched formula ``func(t, x)``."""

    def __init__(self, func, name="flow"):
        self.func = func
        self.name = name

    def evaluate(self, t, x):
        return np.asarray(self.func(t, x), dtype=float)

    def __repr__(self):
        return f"ClosedFormFlow({self.name})"


class AffineFlow(Semiflow):
    """``Pi(t, x) = e^{a t} x + b (1 - e^{a t})``: relaxation towards ``b`` at rate ``-a``."""

    def __init__(self, rate, target=0.0):
        self.rate = float(rate)
        self.target = np.asarray(target, dtype=float)

    def evaluate(self, t, x):
        e = np.exp(self.rate * np.asarray(t, dtype=float))[:, None]
        return e * x + self.target * (1.0 - e)

    def __repr__(self):
        return f"AffineFlow(rate={self.rate}, target={self.target.tolist()})"


class ODEFlow(Semiflow):
    """Semiflow of the autonomous ODE ``x' = field(x)``, integrated by fixed-step RK4.

    Each row is integrated with ``ceil(t / h)`` equal steps, so the result
    for a row never depends on the rest of the batch.  RK4 breaks the exact
    semigroup property at the ``O(h^4)`` level.
    """

    kind = "ode"

    def __init__(self, field, h=1e-3, name="ode"):
        if h <= 0:
            raise ConfigurationError("RK4 step must be positive", field="h")
        self.field = field
        self.h = float(h)
        self.name = name

    def evaluate(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.array(x, dtype=float, copy=True)
        nsteps = np.ceil(t / self.h).astype(np.int64)
        if nsteps.size == 0 or nsteps.max() == 0:
            return x
        step = np.where(nsteps > 0, t / np.maximum(nsteps, 1), 0.0)[:, None]
        f = self.field
        for k in range(int(nsteps.max())):
            active = (k < nsteps)[:, None]
            k1 = f(x)
            k2 = f(x + 0.5 * step * k1)
            k3 = f(x + 0.5 * step * k2)
            k4 = f(x + step * k3)
            x = np.where(active, x + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), x)
        return x

    def __repr__(self):
        return f"ODEFlow({self.name}, h={self.h})"


class JumpMap:
    """A continuous map ``q_s: Y -> Y`` applied to batches of shape ``(M, d)``."""

    def __init__(self, func, name="jump"):
        self.func = func
        self.name = name

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(x), dtype=float)

    def __repr__(self):
        return f"JumpMap({self.name})"


class AffineJump(JumpMap):
    """``q(x) = scale * x + shift``."""

    def __init__(self, scale, shift=0.0):
        self.scale = float(scale)
        self.shift = np.asarray(shift, dtype=float)
        self.name = f"{self.scale}*x+{self.shift.tolist()}"

    def apply(self, x):
        return self.scale * x + self.shift

    def __repr__(self):
        return f"AffineJump(scale={self.scale}, shift={self.shift.tolist()})"


# ---------------------------------------------------------------------------
# probabilities


class PlaceDependentProbabilities:
    """Place-dependent probabilities of the system.

    Parameters
    ----------
    initial : callable
        ``x (M, d) -> (M, N)``, law of the initial regime.
    matrix : callable
        ``x (M, d) -> (M, N, N)``; row ``i`` is the switching law out of regime ``i``.
    jump : callable
        ``x (M, d) -> (M, K)``, law of the jump index at the pre-jump point.
    row : callable, optional
        ``(x (M, d), i (M,)) -> (M, N)``, a shortcut for the selected rows of
        ``matrix``; must agree with it.  Used by the samplers when given.
    """

    def __init__(self, initial, matrix, jump, row=None):
        self.initial = initial
        self.matrix = matrix
        self.jump = jump
        self._row = row

    @classmethod
    def constant(cls, matrix, jump, initial=None):
        """Probabilities that do not depend on the position."""
        mat = np.array(matrix, dtype=float, ndmin=2)
        jmp = np.array(jump, dtype=float, ndmin=1)
        ini = np.array(initial, dtype=float, ndmin=1) if initial is not None else mat[0].copy()

        def _initial(x):
            return np.broadcast_to(ini, (len(x),) + ini.shape)

        def _matrix(x):
            return np.broadcast_to(mat, (len(x),) + mat.shape)

        def _jump(x):
            return np.broadcast_to(jmp, (len(x),) + jmp.shape)

        out = cls(_initial, _matrix, _jump)
        out.constant_values = (ini, mat, jmp)
        return out

    def row(self, x: np.ndarray, i: np.ndarray) -> np.ndarray:
        """Switching laws ``p_{i_m, .}(x_m)`` for every batch row, shape ``(M, N)``."""
        if self._row is not None:
            return self._row(x, i)
        mat = self.matrix(x)
        return mat[np.arange(len(x)), i]


# ---------------------------------------------------------------------------
# constants and the system


_CONSTANT_FIELDS = ("L", "alpha", "L_q", "L_p", "L_pbar", "p0", "q0", "x_star")


@dataclass(frozen=True)
class ModelConstants:
    """Constants certifying the Lipschitz-type hypotheses of a system.

    ``L``, ``alpha`` bound the averaged flow expansion, ``L_q`` the averaged
    jump expansion, ``L_p``/``L_pbar`` the Lipschitz constants of the switching
    and jump probabilities, ``p0``/``q0`` the overlap lower bounds, and
    ``x_star`` is the reference point of the Lyapunov function.  ``provenance``
    maps each field to ``"analytic"`` or ``"estimated"``.
    """

    L: float
    alpha: float
    L_q: float
    L_p: float
    L_pbar: float
    p0: float
    q0: float
    x_star: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.L >= 1:
            raise ConfigurationError("L must be >= 1", field="L")
        for name in ("L_q", "L_p", "L_pbar"):
            if not getattr(self, name) >= 0:
                raise ConfigurationError(f"{name} must be nonnegative", field=name)
        for name in ("p0", "q0"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigurationError(f"{name} must lie in (0, 1]", field=name)
        object.__setattr__(self, "x_star", tuple(float(v) for v in np.ravel(self.x_star)))
        prov = {k: "analytic" for k in _CONSTANT_FIELDS}
        prov.update(self.provenance or {})
        object.__setattr__(self, "provenance", prov)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in _CONSTANT_FIELDS}
        out["x_star"] = list(self.x_star)
        out["provenance"] = dict(self.provenance)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConstants":
        missing = [k for k in _CONSTANT_FIELDS if k not in data]
        if missing:
            raise ConfigurationError(f"constants missing {missing}", field=missing[0])
        kw = {k: data[k] for k in _CONSTANT_FIELDS}
        for k in _CONSTANT_FIELDS[:-1]:
            kw[k] = float(kw[k])
        return cls(**kw, provenance=data.get("provenance", {}))


@dataclass(frozen=True)
class SystemSpec:
    """The system ``(Pi, q, p)`` together with the jump intensity ``lam``."""

    space: StateSpace
    flows: tuple
    jumps: tuple
    probs: PlaceDependentProbabilities
    lam: float
    constants: Optional[ModelConstants] = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "jumps", tuple(self.jumps))
        if len(self.flows) < 1:
            raise ConfigurationError("flows: at least one semiflow is required (N >= 1)", field="flows")
        if len(self.jumps) < 1:
            raise ConfigurationError("jumps: at least one jump map is required (K >= 1)", field="jumps")
        try:
            lam = float(self.lam)
        except (TypeError, ValueError):
            raise ConfigurationError("lambda must be a number", field="lambda") from None
        if not lam > 0 or not math.isfinite(lam):
            raise ConfigurationError(f"lambda must be positive, got {self.lam}", field="lambda")
        object.__setattr__(self, "lam", lam)
        if self.constants is not None:
            if not lam > self.constants.alpha:
                raise ConfigurationError(
                    f"lambda={lam} must exceed constants.alpha={self.constants.alpha}", field="lambda"
                )
            if len(self.constants.x_star) != self.space.dimension:
                raise ConfigurationError("x_star has the wrong dimension", field="x_star")

    @property
    def N(self) -> int:
        return len(self.flows)

    @property
    def K(self) -> int:
        return len(self.jumps)

    @property
    def dimension(self) -> int:
        return self.space.dimension

    @property
    def x_star(self) -> np.ndarray:
        if self.constants is None:
            raise ConfigurationError("model has no constants (x_star unknown)", field="constants")
        return np.asarray(self.constants.x_star, dtype=float)

    def with_lambda(self, lam: float) -> "SystemSpec":
        """Copy of the system with a different jump intensity."""
        return SystemSpec(self.space, self.flows, self.jumps, self.probs, lam, self.constants, self.name)

    def with_constants(self, constants: Optional[ModelConstants]) -> "SystemSpec":
        return SystemSpec(self.space, self.flows, self.jumps, self.probs, self.lam, constants, self.name)


@dataclass(frozen=True)
class HybridState:
    """A point ``(x, i)`` of ``Y x I``; ``i`` is the current regime (0-based)."""

    x: np.ndarray
    i: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        if int(self.i) != self.i or self.i < 0:
            raise ConfigurationError(f"regime index must be a nonnegative integer, got {self.i}", field="i")
        object.__setattr__(self, "i", int(self.i))

    def __eq__(self, other):
        if not isinstance(other, HybridState):
            return NotImplemented
        return self.i == other.i and np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash((self.i, self.x.tobytes()))


def hybrid_distance(a: HybridState, b: HybridState, space: StateSpace) -> float:
    """``d((x, i), (y, j)) = rho(x, y) + [i != j]``."""
    rho = float(space.dist(a.x[None, :], b.x[None, :])[0])
    return rho + (0.0 if a.i == b.i else 1.0)


def evaluate_flow(spec: SystemSpec, j: int, t: float, x) -> np.ndarray:
    """Evaluate ``Pi_j(t, x)`` at a single point."""
    if not 0 <= j < spec.N:
        raise DomainError(f"flow index {j} outside 0..{spec.N - 1}")
    if t < 0:
        raise DomainError(f"flow time must be nonnegative, got {t}")
    pt = as_point(x, spec.dimension)
    return spec.flows[j].evaluate(np.array([float(t)]), pt[None, :])[0]


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float
    tolerance: float


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "residual": c.residual, "tolerance": c.tolerance}
                for c in self.checks
            ],
        }


def _probe_points(spec: SystemSpec, n: int, rng) -> np.ndarray:
    R = spec.space.probe_radius
    pts = rng.uniform(-R, R, size=(n, spec.dimension))
    extra = [np.zeros(spec.dimension)]
    if spec.constants is not None:
        extra.append(spec.x_star)
    return np.vstack([np.array(extra), pts])


def validate_system(spec: SystemSpec, n_probe: int = 1000, seed: int = 0) -> ValidationReport:
    """Spot-check the definitional invariants of a system on random probes.

    Checks semiflow identity, the semigroup law, probability row sums and
    ranges, and the metric axioms.  Each check records the worst residual seen.
    """
    if n_probe < 1:
        raise ConfigurationError("n_probe must be >= 1", field="n_probe")
    rng = np.random.default_rng(seed)
    rho = spec.space.dist
    X = _probe_points(spec, n_probe, rng)
    M = len(X)
    t = rng.exponential(1.0 / spec.lam, size=M)
    s = rng.exponential(1.0 / spec.lam, size=M)
    scale = 1.0 + rho(X, np.zeros_like(X))

    ident, ident_tol, ident_ok, semigroup = 0.0, 0.0, True, 0.0
    for flow in spec.flows:
        tol = 1e-9 if flow.kind == "ode" else 0.0
        r = float(np.max(rho(flow.evaluate(np.zeros(M), X), X)))
        ident_ok = ident_ok and r <= tol
        ident, ident_tol = max(ident, r), max(ident_tol, tol)
        once = flow.evaluate(s + t, X)
        twice = flow.evaluate(s, flow.evaluate(t, X))
        semigroup = max(semigroup, float(np.max(rho(once, twice) / scale)))

    row_err, range_err = 0.0, 0.0
    for arr, axis_name in (
        (spec.probs.initial(X), "initial"),
        (spec.probs.matrix(X), "matrix"),
        (spec.probs.jump(X), "jump"),
    ):
        arr = np.asarray(arr, dtype=float)
        row_err = max(row_err, float(np.max(np.abs(arr.sum(axis=-1) - 1.0))))
        range_err = max(range_err, float(np.max(np.maximum(-arr, 0.0))), float(np.max(np.maximum(arr - 1.0, 0.0))))

    Y = rng.permutation(X)
    Z = rng.permutation(X)
    dxy, dyx = rho(X, Y), rho(Y, X)
    metric_err = max(
        float(np.max(np.abs(rho(X, X)))),
        float(np.max(np.abs(dxy - dyx))),
        float(np.max(np.maximum(rho(X, Z) - dxy - rho(Y, Z), 0.0))),
        float(np.max(np.maximum(-dxy, 0.0))),
    )

    checks = (
        Check("semiflow-identity", ident_ok, ident, ident_tol),
        Check("semigroup", semigroup <= 1e-7, semigroup, 1e-7),
        Check("probability-row-sums", row_err <= 1e-9, row_err, 1e-9),
        Check("probability-range", range_err <= 1e-12, range_err, 1e-12),
        Check("metric-axioms", metric_err <= 1e-12, metric_err, 1e-12),
    )
    return ValidationReport(checks)
