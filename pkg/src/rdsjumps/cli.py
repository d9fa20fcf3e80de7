"""
Command-line front end.

::

    rdsjumps <command> --model NAME|FILE --seed N [--lambda L] [--threads T] [--out DIR] [--config FILE]

Commands: validate, simulate, invariant, lln, couple, fm, check, rate.  Each
run writes its artifacts and a ``manifest.json`` (full resolved config and
library versions) to ``--out``.  ``--threads`` changes wall time only.

Exit codes: 0 success, 1 runtime error, 2 validation failure (or an
unsatisfied criterion), 64 usage error, 78 configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .analysis import (
    check_contraction_criterion,
    check_s1,
    estimate_constants,
    estimate_invariant,
    lln_run,
    rate_fit,
    to_json,
)
from .core import HybridState, validate_system
from .coupling import coupling_contraction_estimate, coupling_diagnostics, write_coupling_trace
from .errors import ConfigurationError, RDSError
from .measure import EmpiricalMeasure, fm_distance
from .models import load_model, model_from_dict
from .observables import REGISTRY_HELP, parse_observable
from .sim import RngStream, ensemble_states, sample_chain, write_ensemble_csv, write_trajectory_csv

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 64, 78

# flags that never change output bytes and stay out of the manifest
_NON_SEMANTIC = {"threads", "out", "config", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--model", default="linear1d", help="built-in name or model JSON file")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="jump intensity (default: model's)")
    p.add_argument("--seed", type=int, default=None, help="master seed (required except for fm)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory (created if absent)")
    p.add_argument("--config", default=None, help="JSON file whose keys override the flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdsjumps", description="Random dynamical systems with randomly chosen jumps.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="spot-check the system's definitional invariants")
    _common(p)
    p.add_argument("--n-probe", type=int, default=1000)

    p = sub.add_parser("simulate", help="sample one chain or an ensemble")
    _common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--x0", default="0")
    p.add_argument("--xi0", default="0", help="initial regime or 'auto'")
    p.add_argument("--n-traj", type=int, default=1, help="ensemble size; >1 writes ensemble.csv")

    p = sub.add_parser("invariant", help="estimate the invariant measure from one long chain")
    _common(p)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--n-keep", type=int, default=100_000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--x0", default=None)
    p.add_argument("--xi0", default="0")
    p.add_argument("--marginal", action="store_true", help="drop the regime index")

    p = sub.add_parser("lln", help="ergodic averages over several seeds")
    _common(p)
    p.add_argument("--f", default="cap:0:10", help=REGISTRY_HELP)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--checkpoints", default=None, help="comma-separated, default powers of ten up to n")
    p.add_argument("--seeds", default=None, help="comma-separated, default seed..seed+9")
    p.add_argument("--x0", default=None)
    p.add_argument("--xi0", default="0")

    p = sub.add_parser("couple", help="coupled-chain contraction and residual-mass diagnostics")
    _common(p)
    p.add_argument("--pairs", type=int, default=100, help="number of random state pairs")
    p.add_argument("--n-steps", type=int, default=1)
    p.add_argument("--n-rep", type=int, default=1000)
    p.add_argument("--trace", action="store_true", help="also write trace.csv")

    p = sub.add_parser("fm", help="Fortet-Mourier distance between two measure files")
    _common(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--cap", type=int, default=4000)
    p.add_argument("--normalize", action="store_true", help="rescale weights to unit mass")

    p = sub.add_parser("check", help="contraction criterion, Lyapunov constants and overlap bounds")
    _common(p)
    p.add_argument("--n-pairs", type=int, default=1000)
    p.add_argument("--t-grid", default="0,0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")
    p.add_argument("--t-samples", type=int, default=8)

    p = sub.add_parser("rate", help="fit the geometric decay of the FM distance between two laws")
    _common(p)
    p.add_argument("--a", default="0@0", help="state 'x[,x...]@i' or measure CSV")
    p.add_argument("--b", default="invariant", help="state, measure CSV or 'invariant'")
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--ensemble", type=int, default=10_000)
    p.add_argument("--fm-cap", type=int, default=2000)
    p.add_argument("--marginal", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _floats(text, field):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse {text!r} as numbers", field=field) from None


def _ints(text, field):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse {text!r} as integers", field=field) from None


def _xi0(text):
    if str(text) == "auto":
        return "auto"
    return _ints(text, "xi0")[0]


def _state(text, d):
    x, _, i = str(text).partition("@")
    pt = _floats(x, "state")
    if len(pt) == 1 and d > 1:
        pt = pt * d
    return HybridState(np.array(pt), int(i) if i else 0)


def _init(text, spec):
    if isinstance(text, str) and os.path.exists(text):
        with open(text) as fh:
            return EmpiricalMeasure.from_csv(fh, spec.space)
    return _state(text, spec.dimension)


def _load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}", field="config") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}", field="config") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object", field="config")
    return data


_BLOCKS = {"simulate": "sim"}


def _apply_config(args, parser_defaults):
    data = _load_config(args.config)
    cmd = args.command
    flat = {k: v for k, v in data.items() if not isinstance(v, dict) or k == "model"}
    block = data.get(_BLOCKS.get(cmd, cmd), {})
    if not isinstance(block, dict):
        raise ConfigurationError(f"config block for {cmd} must be an object", field=cmd)
    flat.update(block)
    known = set(vars(args))
    for key, val in flat.items():
        attr = "lam" if key == "lambda" else key.replace("-", "_")
        if attr not in known or attr in ("command", "config"):
            if key in ("sim", "invariant", "lln", "rate", "couple", "check", "fm", "validate"):
                continue
            raise ConfigurationError(f"unknown config key {key!r} for {cmd}", field=key)
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        setattr(args, attr, val)
    return args


def _spec(args):
    if isinstance(args.model, dict):
        return model_from_dict({"model": args.model}, args.lam)
    return load_model(args.model, args.lam)


def _write(out, name, text, written):
    with open(os.path.join(out, name), "w", newline="") as fh:
        fh.write(text)
    written.append(name)


def _manifest(args, outputs, extra=None):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NON_SEMANTIC}
    if "lam" in config:
        config["lambda"] = config.pop("lam")
    data = {
        "command": args.command,
        "config": config,
        "seed": args.seed,
        "outputs": sorted(outputs),
        "versions": {
            "rdsjumps": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2, sort_keys=True, default=str)


# ---------------------------------------------------------------------------
# commands


def _cmd_validate(args, spec, out, written):
    rep = validate_system(spec, args.n_probe, args.seed)
    _write(out, "validation.json", to_json(rep.to_dict()), written)
    print(f"validate: {'pass' if rep.passed else 'FAIL'}")
    for c in rep.checks:
        print(f"  {c.name:22s} {'pass' if c.passed else 'FAIL'}  residual={c.residual:.3e}  tol={c.tolerance:.1e}")
    return EXIT_OK if rep.passed else EXIT_VALIDATION


def _cmd_simulate(args, spec, out, written):
    x0 = np.array(_floats(args.x0, "x0"))
    xi0 = _xi0(args.xi0)
    if args.n_traj > 1:
        if xi0 == "auto":
            raise ConfigurationError("--xi0 auto is only supported for single chains", field="xi0")
        X, XI = ensemble_states(spec, [HybridState(np.resize(x0, spec.dimension), xi0)], args.n, args.n_traj, args.seed, args.threads)
        with open(os.path.join(out, "ensemble.csv"), "w", newline="") as fh:
            write_ensemble_csv(X, XI, fh)
        written.append("ensemble.csv")
        print(f"simulate: {args.n_traj} trajectories x {args.n} steps -> ensemble.csv")
    else:
        sample = sample_chain(spec, x0, xi0, args.n, RngStream(args.seed, 0))
        with open(os.path.join(out, "trajectory.csv"), "w", newline="") as fh:
            write_trajectory_csv(sample, fh)
        written.append("trajectory.csv")
        print(f"simulate: {args.n} steps -> trajectory.csv")
    return EXIT_OK


def _cmd_invariant(args, spec, out, written):
    x0 = None if args.x0 is None else _floats(args.x0, "x0")
    mu = estimate_invariant(spec, args.burn_in, args.n_keep, args.thin, x0, _xi0(args.xi0), args.seed, args.marginal)
    with open(os.path.join(out, "measure.csv"), "w", newline="") as fh:
        mu.to_csv(fh)
    written.append("measure.csv")
    summary = {"atoms": len(mu), "mean": mu.mean().tolist(), "second_moment": mu.moment(2).tolist()}
    _write(out, "summary.json", to_json(summary), written)
    print(f"invariant: {len(mu)} atoms, mean {mu.mean().tolist()}, second moment {mu.moment(2).tolist()}")
    return EXIT_OK


def _cmd_lln(args, spec, out, written):
    f = parse_observable(args.f)
    seeds = _ints(args.seeds, "seeds") if args.seeds else [args.seed + k for k in range(10)]
    if args.checkpoints:
        cps = _ints(args.checkpoints, "checkpoints")
    else:
        cps = [10**k for k in range(1, 20) if 10**k <= args.n]
        cps = cps if cps and cps[-1] == args.n else cps + [args.n]
    x0 = None if args.x0 is None else _floats(args.x0, "x0")
    rep = lln_run(spec, f, x0, _xi0(args.xi0), args.n, cps, seeds)
    _write(out, "lln.json", to_json(rep), written)
    with open(os.path.join(out, "lln.csv"), "w", newline="") as fh:
        rep.write_csv(fh)
    written.append("lln.csv")
    print(f"lln: reference {rep.reference:.6f}, max final error {rep.max_final_error:.4g}, sign-test p {rep.sign_test_p:.3g}")
    return EXIT_OK


def _random_pairs(spec, n, seed):
    gen = RngStream(seed, 1 << 40).generator()
    R = spec.space.probe_radius
    X = gen.uniform(-R, R, size=(2, n, spec.dimension))
    I = gen.integers(0, spec.N, size=(2, n))
    return [(HybridState(X[0, k], I[0, k]), HybridState(X[1, k], I[1, k])) for k in range(n)]


def _cmd_couple(args, spec, out, written):
    pairs = _random_pairs(spec, args.pairs, args.seed)
    est = coupling_contraction_estimate(spec, pairs, args.n_steps, args.n_rep, args.seed, keep_trace=args.trace)
    report = est.to_dict()
    if spec.constants is not None:
        diags = [coupling_diagnostics(spec, a, b) for a, b in pairs]
        slack = [1.0 - d.coupled_mass - d.residual_bound for d in diags]
        report["residual_bound_max_excess"] = max(slack)
        report["coupled_mass_min"] = min(d.coupled_mass for d in diags)
    _write(out, "coupling.json", to_json(report), written)
    if args.trace:
        with open(os.path.join(out, "trace.csv"), "w", newline="") as fh:
            write_coupling_trace(est.trace, fh)
        written.append("trace.csv")
    print(f"couple: beta_hat {est.beta_hat:.4f} (beta {est.beta})")
    return EXIT_OK


def _cmd_fm(args, spec, out, written):
    mus = []
    for path in (args.a, args.b):
        try:
            with open(path) as fh:
                first = EmpiricalMeasure.from_csv(fh, None, args.normalize)
        except OSError as exc:
            raise ConfigurationError(f"cannot read measure file: {exc}", field="measure") from None
        space = spec.space if spec.dimension == first.dimension else first.space
        mus.append(EmpiricalMeasure(first.points, first.weights, first.index, space))
    res = fm_distance(mus[0], mus[1], cap=args.cap)
    _write(out, "fm.json", res.to_json(), written)
    print(f"fm: {res.value!r} ({res.status})")
    return EXIT_OK


def _cmd_check(args, spec, out, written):
    report = {}
    est = estimate_constants(spec, args.n_pairs, _floats(args.t_grid, "t_grid"), args.seed)
    report["estimated_constants"] = est.to_dict()
    constants = spec.constants if spec.constants is not None else est
    report["constants_used"] = "analytic" if spec.constants is not None else "estimated"
    crit = check_contraction_criterion(constants, spec.lam, spec.with_constants(constants) if spec.lam > constants.alpha else None)
    report["criterion"] = crit.to_dict()
    report["s1"] = check_s1(spec, args.n_pairs, args.t_samples, args.seed, constants).to_dict()
    _write(out, "check.json", to_json(report), written)
    print(
        f"check: lhs={crit.lhs!r} beta={crit.beta!r} a={crit.a!r} b={crit.b!r} "
        f"{'satisfied' if crit.satisfied else 'NOT satisfied'}"
    )
    return EXIT_OK if crit.satisfied else EXIT_VALIDATION


def _cmd_rate(args, spec, out, written):
    a = _init(args.a, spec)
    b = "invariant" if args.b == "invariant" else _init(args.b, spec)
    fit = rate_fit(spec, a, b, args.n_max, args.ensemble, args.fm_cap, args.seed, args.threads, args.marginal)
    _write(out, "rate.json", to_json(fit), written)
    with open(os.path.join(out, "rate.csv"), "w", newline="") as fh:
        fit.write_csv(fh)
    written.append("rate.csv")
    print(f"rate: status {fit.status}, q_hat {fit.q!r}, C_hat {fit.C!r}, residual {fit.residual!r}")
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "invariant": _cmd_invariant,
    "lln": _cmd_lln,
    "couple": _cmd_couple,
    "fm": _cmd_fm,
    "check": _cmd_check,
    "rate": _cmd_rate,
}


def run(argv=None) -> int:
    """Run the command line with ``argv`` and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(_COMMANDS))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.config:
            args = _apply_config(args, None)
        if args.seed is None and args.command != "fm":
            raise UsageError("--seed is required (there is no clock-based default)")
        if args.threads is None or int(args.threads) < 1:
            raise ConfigurationError("--threads must be >= 1", field="threads")
        spec = _spec(args)
        args.lam = spec.lam
        out = str(args.out)
        os.makedirs(out, exist_ok=True)
        written = []
        code = _COMMANDS[args.command](args, spec, out, written)
        _write(out, "manifest.json", _manifest(args, written + ["manifest.json"]), [])
        return code
    except UsageError as exc:
        print(f"rdsjumps: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        field = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"rdsjumps: configuration error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RDSError, ValueError, ArithmeticError, OSError) as exc:
        print(f"rdsjumps: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():  # pragma: no cover - console entry point
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
