"""
Seeded sampling of the post-jump chain, the piecewise-deterministic
trajectory and ensembles of independent trajectories.

One step from the state ``(x, i)`` consumes exactly three uniforms, in stream
order ``(u_dt, u_eta, u_xi)``:

1. ``dt = -log(1 - u_dt) / lam``;
2. the new regime ``j`` is drawn from row ``i`` of ``p(x)`` with ``u_xi``;
3. ``y = Pi_j(dt, x)``;
4. the jump index ``s`` is drawn from ``pbar(y)`` with ``u_eta``;
5. the new state is ``(q_s(y), j)``.

The state therefore carries the regime that produced the current position,
which is the state space on which the transition operator ``P`` acts.

Random numbers come from :class:`RngStream`, a Philox counter-based generator
keyed by ``(seed, stream_id)``.  Trajectory ``k`` of an ensemble always uses
stream ``k``, so ensemble output is independent of how the work is split.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import HybridState, SystemSpec, as_point
from .errors import ConfigurationError, DomainError, ProbabilityError, RangeError

__all__ = [
    "RngStream",
    "StepRecord",
    "ChainSample",
    "draw_initial_flow",
    "step_chain",
    "sample_chain",
    "evaluate_trajectory",
    "sample_ensemble",
    "ensemble_states",
    "advance_batch",
    "categorical",
    "draw_by_weights",
    "write_trajectory_csv",
    "write_ensemble_csv",
]

_MASK64 = (1 << 64) - 1
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([int(self.seed) & _MASK64, int(self.stream_id) & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def as_generator(rng):
    """Accept an :class:`RngStream`, an int seed (stream 0) or anything with ``random(size)``."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    if hasattr(rng, "random"):
        return rng
    raise ConfigurationError("rng must be an RngStream, an int seed or a generator", field="rng")


def categorical(probs: np.ndarray, u: np.ndarray, check: bool = True) -> np.ndarray:
    """Inverse-CDF categorical draw, one uniform per row.

    Index ``k`` is chosen when ``u`` falls in ``[c_{k-1}, c_k)`` of the
    cumulative sums; a ``u`` at or above the final sum maps to the last
    category with positive probability.
    """
    probs = np.asarray(probs, dtype=float)
    if len(probs) == 1:
        return np.array([_categorical_one(probs[0].tolist(), float(u[0]), check)], dtype=np.int64)
    cum = np.cumsum(probs, axis=1)
    if check:
        if np.any(np.abs(cum[:, -1] - 1.0) > ROW_SUM_TOL) or np.any(probs < 0):
            bad = int(np.argmax(np.abs(cum[:, -1] - 1.0)))
            raise ProbabilityError(f"probability vector {probs[bad].tolist()} does not sum to 1")
    idx = np.count_nonzero(cum <= u[:, None], axis=1)
    over = idx >= probs.shape[1]
    if over.any():
        last_pos = probs.shape[1] - 1 - np.argmax(probs[over, ::-1] > 0, axis=1)
        idx[over] = last_pos
    return idx


def _categorical_one(p, u, check):
    # same cumulative sums as np.cumsum (sequential left-to-right adds)
    acc = 0.0
    pick = None
    last_pos = 0
    for k, v in enumerate(p):
        if check and v < 0:
            raise ProbabilityError(f"probability vector {p} has a negative entry")
        acc += v
        if v > 0:
            last_pos = k
        if pick is None and u < acc:
            pick = k
    if check and abs(acc - 1.0) > ROW_SUM_TOL:
        raise ProbabilityError(f"probability vector {p} does not sum to 1")
    return last_pos if pick is None else pick


def draw_by_weights(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Categorical draws from one positive weight vector, same tie-break as :func:`categorical`."""
    cum = np.cumsum(weights)
    return np.minimum(np.searchsorted(cum, u, side="right"), len(weights) - 1)


class _Engine:
    """Batched one-step transition for a fixed system."""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        self.lam = spec.lam
        self.N, self.K = spec.N, spec.K
        probs = spec.probs
        self.const = getattr(probs, "constant_values", None)
        if self.const is not None:
            ini, mat, jmp = self.const
            for arr in (ini[None, :], mat, jmp[None, :]):
                categorical(arr, np.zeros(len(arr)))

    def switch(self, x, i, u):
        if self.N == 1:
            if self.const is None:
                categorical(self.spec.probs.row(x, i), u)
            return np.zeros(len(x), dtype=np.int64)
        if self.const is not None:
            return categorical(self.const[1][i], u, check=False)
        return categorical(self.spec.probs.row(x, i), u)

    def jump_index(self, y, u):
        if self.K == 1:
            if self.const is None:
                categorical(self.spec.probs.jump(y), u)
            return np.zeros(len(y), dtype=np.int64)
        if self.const is not None:
            return categorical(np.broadcast_to(self.const[2], (len(y), self.K)), u, check=False)
        return categorical(self.spec.probs.jump(y), u)

    def flow(self, j, dt, x):
        if self.N == 1:
            return self.spec.flows[0].evaluate(dt, x)
        if len(x) == 1:
            return self.spec.flows[int(j[0])].evaluate(dt, x)
        y = np.empty_like(x)
        for k, fl in enumerate(self.spec.flows):
            m = j == k
            if m.any():
                y[m] = fl.evaluate(dt[m], x[m])
        return y

    def jump(self, s, y):
        if self.K == 1:
            return self.spec.jumps[0].apply(y)
        if len(y) == 1:
            return self.spec.jumps[int(s[0])].apply(y)
        out = np.empty_like(y)
        for k, q in enumerate(self.spec.jumps):
            m = s == k
            if m.any():
                out[m] = q.apply(y[m])
        return out

    def advance(self, x, i, u):
        """Advance every row of ``(x, i)`` by one step using uniforms ``u`` of shape (M, 3)."""
        dt = -np.log1p(-u[:, 0]) / self.lam
        j = self.switch(x, i, u[:, 2])
        y = self.flow(j, dt, x)
        s = self.jump_index(y, u[:, 1])
        xn = self.jump(s, y)
        return dt, y, s, xn, j


def _draw_uniforms(gens, b):
    if len(gens) == 1:
        return gens[0].random((b, 3))[:, None, :]
    return np.stack([g.random((b, 3)) for g in gens], axis=1)


def _run_blocks(engine, x, xi, gens, n_steps, full=False, block=4096):
    """Run ``len(gens)`` chains in lockstep; yield per-block stacked outputs.

    Chain ``m`` draws its uniforms from ``gens[m]`` only.  Each block yields a
    dict with ``x`` (b, M, d) and ``xi`` (b, M) and, when ``full``, also
    ``dt``, ``xi_prev``, ``y`` and ``eta``.
    """
    M, d = x.shape
    block = max(1, min(block, (1 << 20) // M))
    done = 0
    while done < n_steps:
        b = min(block, n_steps - done)
        U = _draw_uniforms(gens, b)
        X = np.empty((b, M, d))
        XI = np.empty((b, M), dtype=np.int64)
        if full:
            DT = np.empty((b, M))
            XP = np.empty((b, M), dtype=np.int64)
            Y = np.empty((b, M, d))
            ETA = np.empty((b, M), dtype=np.int64)
        adv = engine.advance
        for k in range(b):
            dt, y, s, xn, j = adv(x, xi, U[k])
            if full:
                DT[k] = dt
                XP[k] = xi
                Y[k] = y
                ETA[k] = s
            X[k] = xn
            XI[k] = j
            x, xi = xn, j
        out = {"x": X, "xi": XI}
        if full:
            out.update(dt=DT, xi_prev=XP, y=Y, eta=ETA)
        yield out
        done += b


@dataclass(frozen=True)
class StepRecord:
    """One transition: switch ``xi_prev -> xi`` at the start point, flow ``dt``
    under ``Pi_xi`` to ``y``, jump with ``q_eta`` to ``x``."""

    dt: float
    xi_prev: int
    y: np.ndarray
    eta: int
    x: np.ndarray
    xi: int


@dataclass(frozen=True)
class ChainSample:
    """A realized chain ``(x_n, xi_n)`` with its auxiliary variables, stored column-wise."""

    x0: np.ndarray
    xi0: int
    dt: np.ndarray
    xi_prev: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    seed: Optional[int] = None
    stream: Optional[int] = None

    def __len__(self):
        return len(self.dt)

    @property
    def jump_times(self) -> np.ndarray:
        return np.cumsum(self.dt)

    @property
    def steps(self) -> list:
        return [
            StepRecord(float(self.dt[n]), int(self.xi_prev[n]), self.y[n], int(self.eta[n]), self.x[n], int(self.xi[n]))
            for n in range(len(self.dt))
        ]

    @property
    def positions(self) -> np.ndarray:
        """``x_0, ..., x_n`` as an array of shape (n + 1, d)."""
        return np.vstack([self.x0[None, :], self.x])

    @property
    def regimes(self) -> np.ndarray:
        return np.concatenate([[self.xi0], self.xi])

    @property
    def final_state(self) -> HybridState:
        if len(self.dt) == 0:
            return HybridState(self.x0, self.xi0)
        return HybridState(self.x[-1], int(self.xi[-1]))

    def equals(self, other: "ChainSample") -> bool:
        """Bitwise equality of all recorded arrays."""
        return (
            self.xi0 == other.xi0
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("x0", "dt", "xi_prev", "y", "eta", "x", "xi")
            )
        )


def draw_initial_flow(spec: SystemSpec, x0, rng) -> int:
    """Draw the initial regime from ``p_i(x0)`` using a single uniform."""
    gen = as_generator(rng)
    pt = as_point(x0, spec.dimension)[None, :]
    u = np.atleast_1d(gen.random(1))
    return int(categorical(spec.probs.initial(pt), u)[0])


def _check_state(spec, state: HybridState):
    if not 0 <= state.i < spec.N:
        raise DomainError(f"regime {state.i} outside 0..{spec.N - 1}")
    return as_point(state.x, spec.dimension)


def step_chain(spec: SystemSpec, state: HybridState, rng):
    """One transition of the chain from ``state``.

    Returns
    -------
    (HybridState, StepRecord)
    """
    gen = as_generator(rng)
    x = _check_state(spec, state)[None, :]
    u = np.asarray(gen.random(3), dtype=float).reshape(1, 3)
    dt, y, s, xn, j = _Engine(spec).advance(x, np.array([state.i]), u)
    rec = StepRecord(float(dt[0]), state.i, y[0], int(s[0]), xn[0], int(j[0]))
    return HybridState(xn[0], int(j[0])), rec


def advance_batch(spec: SystemSpec, X, XI, rng):
    """One step from each row of ``(X, XI)`` with uniforms ``rng.random((M, 3))``.

    Returns
    -------
    dt, y, eta, x, xi : arrays with one entry (row) per input state
    """
    gen = as_generator(rng)
    X = np.asarray(X, dtype=float).reshape(len(XI), spec.dimension)
    XI = np.asarray(XI, dtype=np.int64)
    if np.any(XI < 0) or np.any(XI >= spec.N):
        raise DomainError(f"regime index outside 0..{spec.N - 1}")
    u = gen.random((len(X), 3))
    return _Engine(spec).advance(X, XI, u)


def sample_chain(spec: SystemSpec, x0, xi0, n: int, rng) -> ChainSample:
    """Sample ``n`` steps of the chain started at ``(x0, xi0)``.

    ``xi0="auto"`` draws the initial regime from ``p_i(x0)`` with the first
    uniform of the stream.  The result is bitwise reproducible for a given
    ``(seed, stream)``.
    """
    if n < 0:
        raise ConfigurationError("n must be >= 0", field="n")
    seed = stream = None
    if isinstance(rng, RngStream):
        seed, stream = rng.seed, rng.stream_id
    elif isinstance(rng, (int, np.integer)):
        seed, stream = int(rng), 0
    gen = as_generator(rng)
    x0 = as_point(x0, spec.dimension)
    if isinstance(xi0, str):
        if xi0 != "auto":
            raise ConfigurationError("xi0 must be an index or 'auto'", field="xi0")
        xi0 = draw_initial_flow(spec, x0, gen)
    _check_state(spec, HybridState(x0, xi0))
    d = spec.dimension
    if n == 0:
        empty_i = np.zeros(0, dtype=np.int64)
        return ChainSample(x0, int(xi0), np.zeros(0), empty_i, np.zeros((0, d)), empty_i, np.zeros((0, d)), empty_i, seed, stream)
    parts = list(_run_blocks(_Engine(spec), x0[None, :], np.array([int(xi0)]), [gen], n, full=True))
    cat = {k: np.concatenate([p[k][:, 0] for p in parts]) for k in parts[0]}
    return ChainSample(
        x0, int(xi0), cat["dt"], cat["xi_prev"], cat["y"], cat["eta"], cat["x"], cat["xi"], seed, stream
    )


def evaluate_trajectory(sample: ChainSample, spec: SystemSpec, t: float):
    """Evaluate the continuous-time process ``(X(t), xi(t))``.

    On ``[t_{n-1}, t_n)`` the process follows ``Pi_{xi_n}`` from ``x_{n-1}``.
    """
    if t < 0:
        raise DomainError("t must be nonnegative")
    times = np.concatenate([[0.0], sample.jump_times])
    if len(sample) == 0 or not t < times[-1]:
        raise RangeError(f"t={t} is beyond the last jump time; extend the chain")
    k = int(np.searchsorted(times, t, side="right"))
    start = sample.x0 if k == 1 else sample.x[k - 2]
    j = int(sample.xi[k - 1])
    pos = spec.flows[j].evaluate(np.array([t - times[k - 1]]), start[None, :])[0]
    return pos, j


def _initial_states(spec, init, traj_ids, gens, n_traj):
    """Initial states of the trajectories ``traj_ids``.

    A measure (or a list whose length differs from ``n_traj``) is sampled with
    the first uniform of each trajectory's own stream.
    """
    from .measure import EmpiricalMeasure

    d = spec.dimension
    if isinstance(init, HybridState):
        init = [init]
    if isinstance(init, EmpiricalMeasure):
        pts, idx, w = init.points, init.index_array(), init.weights
        u = np.array([g.random() for g in gens])
        pick = draw_by_weights(w, u)
        return pts[pick].copy(), idx[pick].copy()
    init = list(init)
    if not init:
        raise ConfigurationError("init must not be empty", field="init")
    for s in init:
        _check_state(spec, s)
    X = np.array([as_point(s.x, d) for s in init])
    XI = np.array([s.i for s in init], dtype=np.int64)
    if len(init) == 1:
        return np.repeat(X, len(gens), axis=0), np.repeat(XI, len(gens))
    if len(init) == n_traj:
        return X[traj_ids], XI[traj_ids]
    u = np.array([g.random() for g in gens])
    pick = np.minimum((u * len(init)).astype(np.int64), len(init) - 1)
    return X[pick], XI[pick]


def _ensemble_chunk(spec, init, n_steps, traj_ids, seed, n_traj, stream_offset=0):
    gens = [RngStream(seed, stream_offset + int(k)).generator() for k in traj_ids]
    x, xi = _initial_states(spec, init, traj_ids, gens, n_traj)
    X = np.empty((n_steps + 1,) + x.shape)
    XI = np.empty((n_steps + 1, len(x)), dtype=np.int64)
    X[0], XI[0] = x, xi
    pos = 1
    for blk in _run_blocks(_Engine(spec), x, xi, gens, n_steps):
        b = len(blk["x"])
        X[pos:pos + b] = blk["x"]
        XI[pos:pos + b] = blk["xi"]
        pos += b
    return X, XI


def ensemble_states(
    spec: SystemSpec, init, n_steps: int, n_traj: int, seed: int, threads: int = 1, stream_offset: int = 0
):
    """Raw ensemble arrays ``X`` (n_steps + 1, n_traj, d) and ``XI`` (n_steps + 1, n_traj).

    Trajectory ``k`` uses ``RngStream(seed, stream_offset + k)``; ``threads``
    only changes how trajectories are split into batches.
    """
    if n_traj < 1:
        raise ConfigurationError("n_traj must be >= 1", field="n_traj")
    if n_steps < 0:
        raise ConfigurationError("n_steps must be >= 0", field="n_steps")
    threads = max(1, int(threads))
    chunks = [c for c in np.array_split(np.arange(n_traj), threads) if len(c)]
    if len(chunks) == 1:
        results = [_ensemble_chunk(spec, init, n_steps, chunks[0], seed, n_traj, stream_offset)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(
                pool.map(lambda c: _ensemble_chunk(spec, init, n_steps, c, seed, n_traj, stream_offset), chunks)
            )
    X = np.concatenate([r[0] for r in results], axis=1)
    XI = np.concatenate([r[1] for r in results], axis=1)
    return X, XI


def sample_ensemble(spec: SystemSpec, init, n_steps: int, n_traj: int, seed: int, threads: int = 1) -> list:
    """Empirical laws of ``(x_m, xi_m)`` for ``m = 0..n_steps`` over ``n_traj`` trajectories."""
    from .measure import EmpiricalMeasure

    X, XI = ensemble_states(spec, init, n_steps, n_traj, seed, threads)
    return [EmpiricalMeasure.from_samples(X[m], XI[m], spec.space) for m in range(n_steps + 1)]


# ---------------------------------------------------------------------------
# CSV dumps


def _coord_names(prefix, d):
    return [f"{prefix}_{k}" for k in range(d)]


def write_trajectory_csv(sample: ChainSample, fh) -> None:
    """Write ``n,dt,t,xi_prev,eta,y_*,x_*,xi`` rows, one per step."""
    d = sample.x0.shape[0]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "dt", "t", "xi_prev", "eta"] + _coord_names("y", d) + _coord_names("x", d) + ["xi"])
    times = sample.jump_times
    for n in range(len(sample)):
        w.writerow(
            [n + 1, repr(float(sample.dt[n])), repr(float(times[n])), int(sample.xi_prev[n]), int(sample.eta[n])]
            + [repr(float(v)) for v in sample.y[n]]
            + [repr(float(v)) for v in sample.x[n]]
            + [int(sample.xi[n])]
        )


def write_ensemble_csv(X: np.ndarray, XI: np.ndarray, fh) -> None:
    """Write ``step,traj,xi,x_*`` rows for raw ensemble arrays."""
    steps, n_traj, d = X.shape
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "traj", "xi"] + _coord_names("x", d))
    for m in range(steps):
        for k in range(n_traj):
            w.writerow([m, k, int(XI[m, k])] + [repr(float(v)) for v in X[m, k]])


def trajectory_csv_string(sample: ChainSample) -> str:
    buf = io.StringIO()
    write_trajectory_csv(sample, buf)
    return buf.getvalue()
