"""
Built-in models and the JSON model-definition format.

Built-ins
---------
``linear1d``
    One flow ``e^{-t} x``, one jump ``x/2 + c``.  The invariant moments are
    known in closed form (mean ``4/3`` and second moment ``20/11`` at
    ``lam = c = 1``).
``genetoggle``
    Two relaxation flows on the line (towards 0 and towards 1), jumps ``x/2``
    and ``(x + 1)/2``, with switching and jump probabilities
    ``1/4 + clamp(x, 0, 1)/2`` and their complements.
``constjump``
    Degenerate model whose jump sends every point to ``x0``.

Model file
----------
::

    {"model": "linear1d" | {"dimension": d, "flows": [...], "jumps": [...],
                            "probs": {...}, "metric": "euclidean"},
     "lambda": 1.0,
     "params": {...},          # built-in parameters, optional
     "constants": {...} | null}

Custom flows are affine: ``{"rate": a, "target": b}`` or the expression string
``"e^{a t}x + b(1 - e^{a t})"`` (also ``"e^{a t}x"``).  Jumps are
``{"scale": s, "shift": c}`` or ``"s*x + c"``.  Probabilities in a file are
constant: ``{"matrix": [[...]], "jump": [...], "initial": [...]}``.
"""
from __future__ import annotations

import json
import os
import re

import numpy as np

from .core import (
    AffineFlow,
    AffineJump,
    JumpMap,
    ModelConstants,
    PlaceDependentProbabilities,
    StateSpace,
    SystemSpec,
)
from .errors import ConfigurationError

__all__ = ["linear1d", "genetoggle", "constjump", "builtin", "BUILTINS", "load_model", "model_from_dict"]


def linear1d(c=1.0, lam=1.0, with_constants=True) -> SystemSpec:
    """Contracting flow ``e^{-t} x`` followed by the jump ``x/2 + c``."""
    probs = PlaceDependentProbabilities.constant([[1.0]], [1.0], initial=[1.0])
    constants = None
    if with_constants:
        constants = ModelConstants(L=1.0, alpha=-1.0, L_q=0.5, L_p=0.0, L_pbar=0.0, p0=1.0, q0=1.0, x_star=(0.0,))
    return SystemSpec(
        StateSpace(1),
        [AffineFlow(-1.0, 0.0)],
        [AffineJump(0.5, c)],
        probs,
        lam,
        constants,
        name="linear1d",
    )


def _toggle_vector(x):
    out = np.empty((len(x), 2))
    np.clip(x[:, 0], 0.0, 1.0, out=out[:, 0])
    out[:, 0] *= 0.5
    out[:, 0] += 0.25
    np.subtract(1.0, out[:, 0], out=out[:, 1])
    return out


def _toggle_row(x, i):
    # both rows of the switching matrix coincide
    return _toggle_vector(x)


def _toggle_matrix(x):
    v = _toggle_vector(x)
    return np.stack([v, v], axis=1)


def genetoggle(lam=1.0, with_constants=True) -> SystemSpec:
    """Two-regime toggle on the real line with place-dependent switching."""
    probs = PlaceDependentProbabilities(_toggle_vector, _toggle_matrix, _toggle_vector, row=_toggle_row)
    constants = None
    if with_constants:
        constants = ModelConstants(
            L=1.0, alpha=-1.0, L_q=0.5, L_p=1.0, L_pbar=1.0, p0=1.0 / 16, q0=1.0 / 16, x_star=(0.0,)
        )
    return SystemSpec(
        StateSpace(1),
        [AffineFlow(-1.0, 0.0), AffineFlow(-1.0, 1.0)],
        [AffineJump(0.5, 0.0), AffineJump(0.5, 0.5)],
        probs,
        lam,
        constants,
        name="genetoggle",
    )


def constjump(x0=0.0, lam=1.0, with_constants=True) -> SystemSpec:
    """Every jump lands on ``x0``; the chain sits at ``x0`` after one step."""
    target = float(x0)

    def _to_x0(x):
        return np.full_like(x, target)

    probs = PlaceDependentProbabilities.constant([[1.0]], [1.0], initial=[1.0])
    constants = None
    if with_constants:
        constants = ModelConstants(
            L=1.0, alpha=-1.0, L_q=0.0, L_p=0.0, L_pbar=0.0, p0=1.0, q0=1.0, x_star=(target,)
        )
    return SystemSpec(
        StateSpace(1), [AffineFlow(-1.0, 0.0)], [JumpMap(_to_x0, f"const({target})")], probs, lam, constants,
        name="constjump",
    )


BUILTINS = {"linear1d": linear1d, "genetoggle": genetoggle, "constjump": constjump}


def builtin(name: str, **params) -> SystemSpec:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown built-in model {name!r}; choose from {sorted(BUILTINS)}", field="model") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}", field="params") from None


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_FLOW_RE = re.compile(
    rf"^e\^\{{\s*(?P<a>{_NUM})\s*\*?\s*t\s*\}}\s*\*?\s*x"
    rf"(?:\s*\+\s*(?P<b>{_NUM})\s*\*?\s*\(\s*1\s*[-−]\s*e\^\{{\s*(?P<a2>{_NUM})\s*\*?\s*t\s*\}}\s*\))?$"
)
_JUMP_RE = re.compile(rf"^(?:(?P<s>{_NUM})\s*\*?\s*)?x(?:\s*(?P<sign>[-+−])\s*(?P<c>{_NUM}))?$")


def _parse_flow(item, dim):
    if isinstance(item, dict):
        try:
            return AffineFlow(float(item["rate"]), np.broadcast_to(np.asarray(item.get("target", 0.0), float), (dim,)))
        except KeyError:
            raise ConfigurationError("affine flow needs 'rate'", field="flows") from None
    if isinstance(item, str):
        m = _FLOW_RE.match(item.replace(" ", ""))
        if m:
            a = float(m["a"])
            if m["a2"] is not None and float(m["a2"]) != a:
                raise ConfigurationError(f"inconsistent rates in flow {item!r}", field="flows")
            b = float(m["b"]) if m["b"] is not None else 0.0
            return AffineFlow(a, np.full(dim, b))
    raise ConfigurationError(f"cannot parse flow {item!r}; only affine flows are supported in files", field="flows")


def _parse_jump(item, dim):
    if isinstance(item, dict):
        return AffineJump(float(item.get("scale", 1.0)), np.broadcast_to(np.asarray(item.get("shift", 0.0), float), (dim,)))
    if isinstance(item, str):
        m = _JUMP_RE.match(item.replace(" ", ""))
        if m:
            s = float(m["s"]) if m["s"] is not None else 1.0
            c = float(m["c"]) if m["c"] is not None else 0.0
            if m["sign"] in ("-", "−"):
                c = -c
            return AffineJump(s, np.full(dim, c))
    raise ConfigurationError(f"cannot parse jump {item!r}; only affine jumps are supported in files", field="jumps")


def _custom_model(body: dict, lam) -> SystemSpec:
    try:
        dim = int(body.get("dimension", 1))
        flows = [_parse_flow(f, dim) for f in body["flows"]]
        jumps = [_parse_jump(j, dim) for j in body["jumps"]]
    except KeyError as exc:
        raise ConfigurationError(f"model missing field {exc}", field=str(exc.args[0])) from None
    N, K = len(flows), len(jumps)
    probs = body.get("probs", {})
    matrix = probs.get("matrix", np.full((N, N), 1.0 / N) if N else [[1.0]])
    jump = probs.get("jump", np.full(K, 1.0 / K) if K else [1.0])
    mat = np.array(matrix, dtype=float, ndmin=2)
    jmp = np.array(jump, dtype=float, ndmin=1)
    if N and mat.shape != (N, N):
        raise ConfigurationError(f"probs.matrix must be {N}x{N}", field="probs.matrix")
    if K and jmp.shape != (K,):
        raise ConfigurationError(f"probs.jump must have {K} entries", field="probs.jump")
    pd = PlaceDependentProbabilities.constant(mat, jmp, initial=probs.get("initial"))
    space = StateSpace(dim, body.get("metric", "euclidean"), body.get("weights"), body.get("bounded_hint"))
    return SystemSpec(space, flows, jumps, pd, lam, None, name=body.get("name", "custom"))


def model_from_dict(data: dict, lam=None) -> SystemSpec:
    """Build a system from a parsed model file; ``lam`` overrides ``data["lambda"]``."""
    if not isinstance(data, dict) or "model" not in data:
        raise ConfigurationError("model file must be an object with a 'model' field", field="model")
    lam = lam if lam is not None else data.get("lambda", 1.0)
    model = data["model"]
    if isinstance(model, str):
        params = dict(data.get("params") or {})
        params["lam"] = lam
        spec = builtin(model, **params)
    elif isinstance(model, dict):
        spec = _custom_model(model, lam)
    else:
        raise ConfigurationError("'model' must be a name or an object", field="model")
    if "constants" in data:
        consts = data["constants"]
        spec = spec.with_constants(ModelConstants.from_dict(consts) if consts is not None else None)
    return spec


def load_model(source, lam=None) -> SystemSpec:
    """Load a model from a built-in name, a JSON file path, or a parsed dict."""
    if isinstance(source, SystemSpec):
        return source if lam is None else source.with_lambda(lam)
    if isinstance(source, dict):
        return model_from_dict(source, lam)
    if isinstance(source, str) and source in BUILTINS:
        return builtin(source, **({"lam": lam} if lam is not None else {}))
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        try:
            with open(source) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"model file is not valid JSON: {exc}", field="model") from None
        return model_from_dict(data, lam)
    raise ConfigurationError(f"unknown model {source!r}", field="model")
