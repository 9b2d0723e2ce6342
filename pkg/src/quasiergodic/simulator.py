"""Monte Carlo for absorbing birth-death and finite chains.

Paths follow the jump-chain construction with exponential holding times
and exact event times.  Work is split into fixed-size chunks of paths;
chunk ``c`` draws from ``Philox`` keyed by ``(seed, c)``, so a batch is
bit-identical whatever the number of worker processes.  Within a chunk
all live paths advance one event per vectorised step.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain_model import BirthDeathSpec, Convention
from .errors import ExcursionCap, InsufficientSurvivors, InvalidSpec, PreconditionFailed
from .finite_chain import FiniteAbsorbingChain

__all__ = ["TrajectoryBatch", "ConditionedEstimate", "simulate", "simulate_h_process",
           "estimate_qed", "estimate_qsd", "spec_hash", "CHUNK_SIZE", "EXCURSION_CEILING"]

CHUNK_SIZE = 4096
EXCURSION_CEILING = 10 ** 6
MIN_SURVIVORS = 30
_MAX_EVENTS = 10 ** 8


class _BirthDeathKernel:
    """Vectorised rates on labels ``lowest..ceiling``; label ``lowest - 1`` absorbs."""

    def __init__(self, birth, death, lowest, absorbing, ceiling):
        self.birth = birth
        self.death = death
        self.lowest = lowest
        self.absorbing = absorbing
        self.ceiling = ceiling

    def rates(self, states):
        b = np.asarray(self.birth(states), dtype=float)
        d = np.asarray(self.death(states), dtype=float)
        if not self.absorbing:
            d = np.where(states == self.lowest, 0.0, d)
        return b, d

    def step(self, states, u):
        b, d = self.rates(states)
        total = b + d
        if not (np.all(np.isfinite(total)) and np.all(total > 0)):
            raise InvalidSpec("nonpositive or undefined total rate on a visited state")
        return total, np.where(u * total < b, states + 1, states - 1)


class _SpecRates:
    """Picklable rate lookup on original labels for either convention."""

    def __init__(self, rate, offset=0):
        self.rate = rate
        self.offset = offset

    def __call__(self, states):
        return self.rate.values(states - self.offset)


class _FiniteKernel:
    def __init__(self, chain: FiniteAbsorbingChain):
        Q = np.array(chain.generator)
        n = Q.shape[0]
        self.total = -np.diag(Q)
        jumps = np.concatenate([Q, chain.absorption[:, None]], axis=1)
        jumps[np.arange(n), np.arange(n)] = 0.0
        self.cumulative = np.cumsum(jumps, axis=1) / self.total[:, None]
        self.lowest = 1
        self.absorbing = True
        self.ceiling = n
        self.n = n

    def step(self, states, u):
        cum = self.cumulative[states - 1]
        k = (u[:, None] >= cum).sum(axis=1)
        k = np.minimum(k, self.n)
        nxt = np.where(k == self.n, 0, k + 1)
        return self.total[states - 1], nxt


def _kernel_for(model, ceiling):
    if isinstance(model, FiniteAbsorbingChain):
        return _FiniteKernel(model)
    if isinstance(model, BirthDeathSpec):
        if model.convention is not Convention.ABSORBED:
            raise PreconditionFailed("simulation of a plain spec needs the absorbed convention")
        last = model.last_state()
        cap = ceiling if math.isinf(last) else min(ceiling, int(last))
        return _BirthDeathKernel(_SpecRates(model.birth), _SpecRates(model.death), 1, True, cap)
    raise TypeError(f"cannot simulate {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Simulated paths on ``[0, horizon]``.

    ``occupation[p, k]`` is the time path ``p`` spent in ``states[k]``;
    ``absorbed_at`` is ``nan`` for paths alive at the horizon and
    ``terminal_state`` is 0 for absorbed paths.  Censored paths hit the
    excursion ceiling and are excluded from every estimate.
    """

    seed: int
    n_paths: int
    horizon: float
    init: object
    states: np.ndarray
    occupation: np.ndarray
    absorbed_at: np.ndarray
    terminal_state: np.ndarray
    censored: np.ndarray
    chunk_size: int = CHUNK_SIZE
    model_hash: str = ""
    segmented: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def survived(self):
        return np.isnan(self.absorbed_at) & ~self.censored

    @property
    def n_surviving(self):
        return int(self.survived.sum())

    @property
    def n_censored(self):
        return int(self.censored.sum())

    @property
    def survival_fraction(self):
        return self.n_surviving / self.n_paths

    def manifest(self):
        return {
            "seed": self.seed,
            "model_hash": self.model_hash,
            "horizon": self.horizon,
            "init": self.init if np.ndim(self.init) == 0 else list(map(float, self.init)),
            "n_paths": self.n_paths,
            "n_surviving": self.n_surviving,
            "n_censored": self.n_censored,
            "chunk_size": self.chunk_size,
            "segmented": self.segmented,
            **self.meta,
        }

    def fingerprint(self) -> str:
        """SHA-256 over every numeric array, for bit-exact reproducibility checks."""
        h = hashlib.sha256()
        for arr in (self.states, self.occupation, self.absorbed_at, self.terminal_state,
                    self.censored):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def spec_hash(model) -> str:
    doc = model.to_dict()
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _chunk_rng(seed, chunk):
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, chunk], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _initial_states(init, size, rng, lowest):
    if np.ndim(init) == 0:
        return np.full(size, int(init), dtype=np.int64)
    p = np.asarray(init, dtype=float)
    p = p / p.sum()
    return lowest + rng.choice(len(p), size=size, p=p).astype(np.int64)


def _run_chunk(kernel, init, t, size, seed, chunk):
    """Simulate one chunk; returns dense occupation over labels ``lowest..``."""
    rng = _chunk_rng(seed, chunk)
    state = _initial_states(init, size, rng, kernel.lowest)
    if np.any(state < kernel.lowest) or np.any(state > kernel.ceiling):
        raise InvalidSpec("initial state outside the simulated range")
    width = int(max(16, state.max() - kernel.lowest + 2))
    occ = np.zeros((size, width))
    comp = np.zeros((size, width))
    clock = np.zeros(size)
    clock_comp = np.zeros(size)
    absorbed_at = np.full(size, np.nan)
    censored = np.zeros(size, dtype=bool)
    alive = np.arange(size)
    events = 0
    while len(alive):
        s = state[alive]
        hold = rng.standard_exponential(len(alive))
        u = rng.random(len(alive))
        total, nxt = kernel.step(s, u)
        dt = hold / total
        remaining = t - clock[alive]
        ends = dt >= remaining
        dt = np.where(ends, remaining, dt)
        col = s - kernel.lowest
        # Kahan-compensated occupation and clock.
        y = dt - comp[alive, col]
        acc = occ[alive, col] + y
        comp[alive, col] = (acc - occ[alive, col]) - y
        occ[alive, col] = acc
        y = dt - clock_comp[alive]
        acc = clock[alive] + y
        clock_comp[alive] = (acc - clock[alive]) - y
        clock[alive] = acc
        moving = alive[~ends]
        nxt = nxt[~ends]
        state[moving] = nxt
        dead = nxt < kernel.lowest
        absorbed_at[moving[dead]] = clock[moving[dead]]
        over = nxt > kernel.ceiling
        censored[moving[over]] = True
        keep = ~(dead | over)
        alive = moving[keep]
        if len(alive):
            need = int(state[alive].max()) - kernel.lowest + 1
            if need >= width:
                grow = max(need + 1, 2 * width) - width
                occ = np.pad(occ, ((0, 0), (0, grow)))
                comp = np.pad(comp, ((0, 0), (0, grow)))
                width += grow
        events += len(s)
        if events > _MAX_EVENTS:
            raise ExcursionCap(f"more than {_MAX_EVENTS} events in one chunk")
    terminal = np.where(np.isnan(absorbed_at) & ~censored, state, 0)
    return occ, absorbed_at, terminal, censored


def _assemble(results, lowest):
    width = max(r[0].shape[1] for r in results)
    occ = np.concatenate([np.pad(r[0], ((0, 0), (0, width - r[0].shape[1]))) for r in results])
    used = np.nonzero(occ.any(axis=0))[0]
    last = int(used.max()) + 1 if len(used) else 1
    states = np.arange(lowest, lowest + last)
    return (states, occ[:, :last], np.concatenate([r[1] for r in results]),
            np.concatenate([r[2] for r in results]), np.concatenate([r[3] for r in results]))


def _simulate_kernel(kernel, init, t, n_paths, seed, chunk_size, n_jobs):
    sizes = [min(chunk_size, n_paths - c * chunk_size)
             for c in range(math.ceil(n_paths / chunk_size))]
    args = [(kernel, init, t, size, seed, c) for c, size in enumerate(sizes)]
    if n_jobs and n_jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_chunk_star, args))
    else:
        results = [_run_chunk(*a) for a in args]
    return _assemble(results, kernel.lowest)


def _run_chunk_star(a):
    return _run_chunk(*a)


def _check_args(t, n_paths, seed):
    if not t > 0:
        raise PreconditionFailed("horizon must be positive")
    if n_paths < 1:
        raise PreconditionFailed("n_paths must be at least 1")
    if not 0 <= int(seed) < 2 ** 64:
        raise PreconditionFailed("seed must be a 64-bit unsigned integer")


def simulate(model, init, t: float, n_paths: int, seed: int, *,
             ceiling: int = EXCURSION_CEILING, chunk_size: int = CHUNK_SIZE,
             n_jobs: int = 1) -> TrajectoryBatch:
    """Simulate ``n_paths`` paths of a spec or finite chain on ``[0, t]``.

    Parameters
    ----------
    model : BirthDeathSpec or FiniteAbsorbingChain
    init : int or array_like
        Starting state, or starting probabilities over states ``1..``.
    seed : int
        64-bit stream key; together with ``chunk_size`` it fixes the output.
    ceiling : int
        Paths stepping above this state are censored.
    n_jobs : int
        Worker processes; does not affect the result.
    """
    _check_args(t, n_paths, seed)
    kernel = _kernel_for(model, ceiling)
    states, occ, absorbed, terminal, censored = _simulate_kernel(
        kernel, init, float(t), n_paths, int(seed), chunk_size, n_jobs)
    return TrajectoryBatch(int(seed), n_paths, float(t), _init_repr(init), states, occ,
                           absorbed, terminal, censored, chunk_size, spec_hash(model))


def _init_repr(init):
    return int(init) if np.ndim(init) == 0 else tuple(map(float, np.asarray(init) / np.sum(init)))


def _h_kernel(hspec, ceiling):
    spec = hspec.spec
    cap = min(ceiling, int(spec.last_state()) + 1)
    # Reflecting index k is h-state k + 1.
    return _BirthDeathKernel(_SpecRates(spec.birth, 1), _SpecRates(spec.death, 1), 1,
                             False, cap)


def simulate_h_process(hspec, init, t: float, n_paths: int, seed: int, *,
                       segments: int = 1, ceiling: int = EXCURSION_CEILING,
                       chunk_size: int = CHUNK_SIZE, n_jobs: int = 1) -> TrajectoryBatch:
    """Simulate the h-process, which is never absorbed.

    With ``segments > 1`` a single path (``n_paths`` must be 1) of length
    ``t`` is cut into ``segments`` consecutive windows, each resuming at
    the previous window's terminal state; holding times are memoryless,
    so this is the same path law, and the windows feed batch-means errors.
    """
    _check_args(t, n_paths, seed)
    kernel = _h_kernel(hspec, ceiling)
    model_hash = hashlib.sha256(json.dumps(hspec.to_dict(), sort_keys=True).encode()).hexdigest()
    if segments <= 1:
        states, occ, absorbed, terminal, censored = _simulate_kernel(
            kernel, init, float(t), n_paths, int(seed), chunk_size, n_jobs)
        return TrajectoryBatch(int(seed), n_paths, float(t), _init_repr(init), states, occ,
                               absorbed, terminal, censored, chunk_size, model_hash,
                               meta={"process": "h"})
    if n_paths != 1:
        raise PreconditionFailed("segmented simulation follows a single path")
    h = float(t) / segments
    results = []
    current = init
    for k in range(segments):
        r = _run_chunk(kernel, current, h, 1, int(seed), k)
        results.append(r)
        if r[3][0]:
            break
        current = int(r[2][0])
    states, occ, absorbed, terminal, censored = _assemble(results, kernel.lowest)
    return TrajectoryBatch(int(seed), len(results), h, _init_repr(init), states, occ,
                           absorbed, terminal, censored, 1, model_hash, segmented=True,
                           meta={"process": "h", "segments": segments, "total_time": float(t)})


@dataclass(frozen=True, eq=False)
class ConditionedEstimate:
    states: np.ndarray
    point_estimate: np.ndarray
    stderr: np.ndarray
    n_surviving: int
    survival_fraction: float
    n_censored: int = 0

    def at(self, state):
        """``(estimate, stderr)`` at a state label (zero if never visited)."""
        k = int(state) - int(self.states[0]) if len(self.states) else -1
        if 0 <= k < len(self.states):
            return float(self.point_estimate[k]), float(self.stderr[k])
        return 0.0, 0.0

    def aligned(self, n):
        """Estimates and stderrs on states ``1..n``."""
        est = np.zeros(n)
        err = np.zeros(n)
        for j in range(1, n + 1):
            est[j - 1], err[j - 1] = self.at(j)
        return est, err

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["state", "estimate", "stderr"])
        for s, e, se in zip(self.states, self.point_estimate, self.stderr):
            writer.writerow([int(s), repr(float(e)), repr(float(se))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        return {"states": [int(s) for s in self.states],
                "estimate": [float(v) for v in self.point_estimate],
                "stderr": [float(v) for v in self.stderr],
                "n_surviving": self.n_surviving,
                "survival_fraction": self.survival_fraction,
                "n_censored": self.n_censored}


def _survivors(batch, min_survivors):
    mask = batch.survived
    n = int(mask.sum())
    if n < min_survivors:
        raise InsufficientSurvivors(n, min_survivors)
    return mask, n


def estimate_qed(batch: TrajectoryBatch, min_survivors: int = MIN_SURVIVORS) -> ConditionedEstimate:
    """Mean occupation fraction per state over surviving paths.

    For a segmented batch the windows are the batch means.
    """
    mask, n = _survivors(batch, min_survivors)
    frac = batch.occupation[mask] / batch.horizon
    est = frac.mean(axis=0)
    err = frac.std(axis=0, ddof=1) / math.sqrt(n)
    return ConditionedEstimate(batch.states, est, err, n, batch.survival_fraction,
                               batch.n_censored)


def estimate_qsd(batch: TrajectoryBatch, min_survivors: int = MIN_SURVIVORS) -> ConditionedEstimate:
    """Empirical law of the terminal state over surviving paths."""
    mask, n = _survivors(batch, min_survivors)
    term = batch.terminal_state[mask]
    lo = int(batch.states[0]) if len(batch.states) else 1
    hi = max(int(term.max()), int(batch.states[-1]) if len(batch.states) else lo)
    states = np.arange(lo, hi + 1)
    counts = np.bincount(term - lo, minlength=len(states)).astype(float)
    p = counts / n
    err = np.sqrt(p * (1 - p) / n)
    return ConditionedEstimate(states, p, err, n, batch.survival_fraction, batch.n_censored)
