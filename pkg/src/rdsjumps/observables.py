"""
Observables ``f(x, i)`` with declared sup and Lipschitz bounds.

Bounds are trusted, not inferred; :meth:`Observable.spot_check` samples them.
Registry names (used by the command line):

``one``                 constant 1
``coord:k``             ``x_k``                                (unbounded)
``clip:k:lo:hi``        ``min(max(x_k, lo), hi)``
``cap:k:c``             ``min(x_k, c)``                        (unbounded below)
``gauss:k:m:s``         ``exp(-(x_k - m)^2 / (2 s^2))``
``index:j``             indicator of regime ``j``
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError

__all__ = ["Observable", "as_observable", "parse_observable", "REGISTRY_HELP"]

REGISTRY_HELP = "one | coord:k | clip:k:lo:hi | cap:k:c | gauss:k:m:s | index:j"


@dataclass(frozen=True)
class Observable:
    """A batched observable ``func(x (M, d), i (M,)) -> (M,)``.

    ``sup`` and ``lip`` are the declared bounds on ``|f|`` and on the Lipschitz
    constant with respect to the hybrid metric; ``inf`` means no bound.
    """

    func: Callable
    sup: float = math.inf
    lip: float = math.inf
    name: str = "f"

    def __call__(self, x, i):
        x = np.asarray(x, dtype=float)
        i = np.asarray(i)
        return np.asarray(self.func(x, i), dtype=float).reshape(-1)

    @property
    def in_fm_class(self) -> bool:
        """True when the declared bounds put ``f`` in the unit Fortet-Mourier ball."""
        return self.sup <= 1 and self.lip <= 1

    def spot_check(self, points, index, dist) -> dict:
        """Largest observed ``|f|`` and difference quotient on the given sample."""
        v = self(points, index)
        D = dist(points[:, None, :], points[None, :, :]) + (index[:, None] != index[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.abs(v[:, None] - v[None, :]) / D
        q = q[np.isfinite(q)]
        sup_obs = float(np.max(np.abs(v)))
        lip_obs = float(np.max(q)) if q.size else 0.0
        return {
            "sup_observed": sup_obs,
            "lip_observed": lip_obs,
            "ok": sup_obs <= self.sup * (1 + 1e-12) and lip_obs <= self.lip * (1 + 1e-9),
        }


def as_observable(f) -> Observable:
    """Wrap a plain batched callable ``f(x, i)`` (bounds undeclared)."""
    if isinstance(f, Observable):
        return f
    if isinstance(f, str):
        return parse_observable(f)
    if callable(f):
        return Observable(f, name=getattr(f, "__name__", "f"))
    raise ConfigurationError("observable must be callable or a registry name", field="f")


def _one(x, i):
    return np.ones(len(x))


def parse_observable(text: str) -> Observable:
    """Build an observable from its registry name (see module docstring)."""
    parts = text.strip().split(":")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "one" and not args:
            return Observable(_one, 1.0, 0.0, text)
        if kind == "coord" and len(args) == 1:
            k = int(args[0])
            return Observable(lambda x, i: x[:, k], math.inf, 1.0, text)
        if kind == "clip" and len(args) == 3:
            k, lo, hi = int(args[0]), float(args[1]), float(args[2])
            if lo > hi:
                raise ConfigurationError("clip needs lo <= hi", field="f")
            return Observable(lambda x, i: np.clip(x[:, k], lo, hi), max(abs(lo), abs(hi)), 1.0, text)
        if kind == "cap" and len(args) == 2:
            k, c = int(args[0]), float(args[1])
            return Observable(lambda x, i: np.minimum(x[:, k], c), math.inf, 1.0, text)
        if kind == "gauss" and len(args) == 3:
            k, m, s = int(args[0]), float(args[1]), float(args[2])
            if s <= 0:
                raise ConfigurationError("gauss width must be positive", field="f")
            lip = 1.0 / (s * math.sqrt(math.e))
            return Observable(lambda x, i: np.exp(-((x[:, k] - m) ** 2) / (2 * s * s)), 1.0, lip, text)
        if kind == "index" and len(args) == 1:
            j = int(args[0])
            return Observable(lambda x, i: (np.asarray(i) == j).astype(float), 1.0, 1.0, text)
    except ValueError:
        pass
    raise ConfigurationError(f"unknown observable {text!r}; expected {REGISTRY_HELP}", field="f")
