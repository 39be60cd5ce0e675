"""Monte Carlo engines and the time-discretized Markov fluid chain.

Random streams: every call derives its generators from
``numpy.random.SeedSequence(seed)``; replications are processed in fixed-size
blocks, each with its own spawned Philox (counter-based) stream, so results
depend only on ``(model, seed, n)`` and not on how blocks are scheduled over
threads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import ModelError
from .model import HyperExp, MarkovFluidModel, OnOffModel, check_stable, markov_stationary

BLOCK_SIZE = 8192
DEFAULT_CAP = 1e6


class RunawayWarning(RuntimeWarning):
    pass


def fingerprint(obj) -> str:
    """Short stable hash of a model (or any object with ``to_dict``) or dict."""
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _n_jobs(n_jobs):
    if n_jobs is None:
        n_jobs = int(os.environ.get("FLUIDQ_THREADS", "1") or 1)
    return max(1, int(n_jobs))


def _blocks(n: int, seed: int):
    """Split ``n`` replications into blocks with independent generators."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    sizes = [BLOCK_SIZE] * (n // BLOCK_SIZE)
    if n % BLOCK_SIZE:
        sizes.append(n % BLOCK_SIZE)
    seqs = np.random.SeedSequence(int(seed)).spawn(len(sizes))
    return [(size, np.random.Generator(np.random.Philox(s))) for size, s in zip(sizes, seqs)]


def _map_blocks(fn, blocks, n_jobs):
    jobs = _n_jobs(n_jobs)
    if jobs == 1 or len(blocks) <= 1:
        return [fn(size, rng) for size, rng in blocks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))


@dataclass(frozen=True)
class SampleSet:
    """I.i.d. nonnegative samples with provenance.

    ``values`` excludes censored or runaway replications; their count is in
    ``n_censored``. ``diagnostics`` carries kind-specific checks.
    """

    values: np.ndarray
    kind: str
    seed: int
    fingerprint: str
    n_censored: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("sample values must be a 1-D array of finite nonnegative numbers")
        if self.kind not in ("busy-period", "first-passage", "lemma1"):
            raise ValueError(f"unknown sample kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def censored_fraction(self) -> float:
        total = self.values.size + self.n_censored
        return self.n_censored / total if total else 0.0

    def mean(self) -> float:
        return float(self.values.mean())

    def standard_error(self) -> float:
        return float(self.values.std(ddof=1) / math.sqrt(self.values.size))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# kind={self.kind} seed={self.seed} fingerprint={self.fingerprint} "
                     f"censored={self.n_censored}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value"])
            for x in self.values:
                w.writerow([repr(float(x))])

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path, encoding="utf-8") as fh:
            meta_line = fh.readline()
            meta = dict(kv.split("=", 1) for kv in meta_line.lstrip("# ").split())
            rows = list(csv.reader(fh))
        values = np.array([float(r[0]) for r in rows[1:]])
        return cls(values, meta["kind"], int(meta["seed"]), meta["fingerprint"],
                   int(meta.get("censored", 0)))


# --------------------------------------------------------------------------
# On-off busy periods


def _busy_block(model: OnOffModel, i: int, n: int, rng: np.random.Generator, cap: float):
    N = model.n_sources
    lam = model.silence_rates
    r = model.peak_rates
    acts = [s.activity for s in model.sources]

    active = np.zeros((n, N), dtype=bool)
    rem = np.empty((n, N))
    active[:, i] = True
    for j in range(N):
        rem[:, j] = acts[i].sample(rng, n) if j == i else rng.exponential(1.0 / lam[j], n)
    q = np.zeros(n)
    t = np.zeros(n)
    inflow = np.zeros(n)
    rows = np.arange(n)

    duration = np.empty(n)
    work_in = np.empty(n)
    runaway = np.zeros(n, dtype=bool)
    while rows.size:
        rate_in = active.astype(float) @ r
        slope = rate_in - 1.0
        jstar = np.argmin(rem, axis=1)
        dt = rem[np.arange(rows.size), jstar]
        with np.errstate(divide="ignore"):
            t_empty = np.where(slope < 0, q / -np.minimum(slope, -1e-300), np.inf)
        ends = t_empty <= dt
        step = np.where(ends, t_empty, dt)
        t = t + step
        inflow = inflow + rate_in * step
        q = np.where(ends, 0.0, np.maximum(q + slope * step, 0.0))
        over = t > cap
        finished = ends | over
        if finished.any():
            idx = rows[finished]
            duration[idx] = t[finished]
            work_in[idx] = inflow[finished]
            runaway[idx] = over[finished]
            keep = ~finished
            rows, active, rem, q, t, inflow = rows[keep], active[keep], rem[keep], q[keep], t[keep], inflow[keep]
            jstar, dt = jstar[keep], dt[keep]
            if rows.size == 0:
                break
        rem -= dt[:, None]
        k = np.arange(rows.size)
        rem[k, jstar] = 0.0
        was_on = active[k, jstar]
        active[k, jstar] = ~was_on
        for j in range(N):
            sel = jstar == j
            turn_off = sel & was_on
            turn_on = sel & ~was_on
            if turn_off.any():
                rem[k[turn_off], j] = rng.exponential(1.0 / lam[j], int(turn_off.sum()))
            if turn_on.any():
                rem[k[turn_on], j] = acts[j].sample(rng, int(turn_on.sum()))
    return duration, work_in, runaway


def simulate_busy(
    model: OnOffModel,
    i: int,
    n: int,
    seed: int = 0,
    cap: float = DEFAULT_CAP,
    allow_unstable: bool = False,
    n_jobs: int | None = None,
) -> SampleSet:
    """Sample busy periods ``P_i`` by exact event-driven fluid simulation.

    Each replication starts an activity of source ``i`` with an empty buffer
    and all other sources silent, then follows the buffer (slope
    ``sum_j r_j xi_j - 1``) until it empties. Busy periods longer than ``cap``
    are dropped, counted in ``n_censored`` and reported by a warning.

    ``diagnostics["work_residual"]`` is the largest relative gap between fluid
    received and fluid drained over a busy period (the buffer ends empty, so
    these must agree).
    """
    check_stable(model, allow_unstable)
    if not 0 <= i < model.n_sources:
        raise IndexError(f"source index {i} out of range")
    parts = _map_blocks(lambda size, rng: _busy_block(model, i, size, rng, cap), _blocks(n, seed), n_jobs)
    if parts:
        duration = np.concatenate([p[0] for p in parts])
        work_in = np.concatenate([p[1] for p in parts])
        runaway = np.concatenate([p[2] for p in parts])
    else:
        duration = work_in = np.empty(0)
        runaway = np.empty(0, dtype=bool)
    ok = ~runaway
    resid = np.abs(work_in[ok] - duration[ok]) / duration[ok] if ok.any() else np.zeros(0)
    n_run = int(runaway.sum())
    if n_run:
        warnings.warn(f"{n_run} busy periods exceeded the cap {cap:g} and were excluded", RunawayWarning,
                      stacklevel=2)
    return SampleSet(
        duration[ok], "busy-period", int(seed), fingerprint(model), n_run,
        {"work_residual": float(resid.max()) if resid.size else 0.0, "source": i},
    )


# --------------------------------------------------------------------------
# Compound construction behind the mixture composition


def _sum_of_hyperexp(dist: HyperExp, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.asarray(dist.weights)
    g = np.asarray(dist.rates)
    if p.size == 1:
        per = counts[:, None]
    else:
        per = rng.multinomial(counts, p)
    return (rng.gamma(np.maximum(per, 1), 1.0, size=per.shape) * (per > 0) / g).sum(axis=1)


def simulate_lemma1_rv(
    s: float,
    l_list: Sequence[HyperExp],
    c_list: Sequence[float],
    n: int,
    seed: int = 0,
    n_jobs: int | None = None,
) -> SampleSet:
    """Sample ``X + sum_j sum_{k <= N_j} Y_jk`` with ``X ~ Exp(s)``,
    ``N_j | X ~ Poisson(c_j X)`` and ``Y_jk ~ l_j``.

    Its transform is ``s / (s + theta + sum_j c_j (1 - l_j(theta)))``, so it
    serves as a sampling oracle for :func:`fluidq.xform.lemma1_compose`.
    """
    if not s > 0:
        raise ModelError("s must be positive")
    if len(l_list) != len(c_list) or any(c < 0 for c in c_list):
        raise ModelError("c_list must match l_list and be nonnegative")

    def block(size, rng):
        x = rng.exponential(1.0 / s, size)
        total = x.copy()
        for dist, c in zip(l_list, c_list):
            if c == 0:
                continue
            counts = rng.poisson(c * x)
            total += _sum_of_hyperexp(dist, counts, rng)
        return total

    parts = _map_blocks(block, _blocks(n, seed), n_jobs)
    values = np.concatenate(parts) if parts else np.empty(0)
    fp = fingerprint({"s": s, "l": [d.to_dict() for d in l_list], "c": list(map(float, c_list))})
    return SampleSet(values, "lemma1", int(seed), fp)


# --------------------------------------------------------------------------
# Markov fluid queue paths


@dataclass(frozen=True)
class FluidPath:
    """Piecewise-linear level path of a Markov fluid queue.

    ``times`` and ``levels`` are the knots of ``Q``; ``phases[k]`` is the
    phase on ``[times[k], times[k+1])``. Knots include every phase change and
    every instant the level hits zero.
    """

    times: np.ndarray
    phases: np.ndarray
    levels: np.ndarray

    def level_at(self, t):
        return np.interp(t, self.times, self.levels)

    def slopes(self) -> np.ndarray:
        return np.diff(self.levels) / np.diff(self.times)

    def netput(self, rates, t) -> np.ndarray:
        """Free (unreflected) input ``int_0^t r_J(s) ds``.

        Its long-run average ``netput(T) / T`` estimates the drift
        ``sum_i p_i r_i``; the reflected level itself stays bounded when
        the drift is negative.
        """
        rates = np.asarray(rates, dtype=float)
        seg = rates[self.phases] * np.diff(self.times)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return np.interp(t, self.times, cum)


def _jump_chain(q: np.ndarray):
    hold = -np.diag(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        jump = np.where(hold[:, None] > 0, q / hold[:, None], 0.0)
    np.fill_diagonal(jump, 0.0)
    return hold, np.cumsum(jump, axis=1)


def _next_phase(cum: np.ndarray, phase: np.ndarray, u: np.ndarray) -> np.ndarray:
    c = cum[phase]
    nxt = (u[:, None] >= c).sum(axis=1)
    return np.minimum(nxt, cum.shape[1] - 1)


def simulate_fluid_path(
    model: MarkovFluidModel, horizon: float, q0: float = 0.0, j0: int = 0, seed: int = 0
) -> FluidPath:
    """Exact path of ``(Q, J)`` on ``[0, horizon]``.

    The level moves at rate ``r_J`` while positive and at ``max(0, r_J)`` at
    zero, so the path is reflected at the boundary.
    """
    if q0 < 0 or horizon <= 0:
        raise ValueError("need q0 >= 0 and horizon > 0")
    if not 0 <= j0 < model.n_phases:
        raise IndexError("initial phase out of range")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    hold, cum = _jump_chain(model.generator)
    rates = model.rates
    times, phases, levels = [0.0], [j0], [float(q0)]
    t, q, j = 0.0, float(q0), j0
    while t < horizon:
        sojourn = rng.exponential(1.0 / hold[j]) if hold[j] > 0 else np.inf
        end = min(t + sojourn, horizon)
        r = rates[j]
        if r < 0 and q > 0 and q + r * (end - t) < 0:
            times.append(t + q / -r)
            levels.append(0.0)
            phases.append(j)
            q = 0.0
        elif r >= 0 or q > 0:
            q = max(q + r * (end - t), 0.0)
        t = end
        times.append(t)
        levels.append(q)
        if t >= horizon:
            break
        j = int(_next_phase(cum, np.array([j]), rng.random(1))[0])
        phases.append(j)
    return FluidPath(np.array(times), np.array(phases[: len(times) - 1]), np.array(levels))


def _first_passage_block(model, x, q0, j0, n, rng, cap):
    hold, cum = _jump_chain(model.generator)
    rates = model.rates
    if j0 is None:
        p = markov_stationary(model)
        phase = rng.choice(model.n_phases, size=n, p=p)
    else:
        phase = np.full(n, j0, dtype=np.int64)
    level = np.full(n, float(q0))
    t = np.zeros(n)
    rows = np.arange(n)
    out = np.empty(n)
    censored = np.zeros(n, dtype=bool)
    while rows.size:
        h = hold[phase]
        with np.errstate(divide="ignore"):
            sojourn = np.where(h > 0, rng.exponential(1.0, rows.size) / np.where(h > 0, h, 1.0), np.inf)
        r = rates[phase]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cross = np.where(r > 0, (x - level) / np.where(r > 0, r, 1.0), np.inf)
        crosses = (r > 0) & (t_cross < sojourn)
        over = ~crosses & (t + sojourn > cap)
        done = crosses | over
        if done.any():
            out[rows[crosses]] = t[crosses] + t_cross[crosses]
            censored[rows[over]] = True
            keep = ~done
            rows, phase, level, t, sojourn, r = rows[keep], phase[keep], level[keep], t[keep], sojourn[keep], r[keep]
            if rows.size == 0:
                break
        level = np.maximum(level + r * sojourn, 0.0)
        t = t + sojourn
        phase = _next_phase(cum, phase, rng.random(rows.size))
    return out[~censored], int(censored.sum())


def first_passage_samples(
    model: MarkovFluidModel,
    x: float,
    q0: float = 0.0,
    j0: int | None = 0,
    n: int = 10_000,
    seed: int = 0,
    cap: float = DEFAULT_CAP,
    n_jobs: int | None = None,
) -> SampleSet:
    """Sample ``tau(x) = inf{t >= 0 : Q(t) > x}`` from exact paths.

    Level crossings are solved linearly inside the current phase sojourn.
    ``j0=None`` draws the initial phase from the stationary law. Paths that
    have not crossed by time ``cap`` are censored; the count is in
    ``n_censored`` and the fraction in ``censored_fraction``.
    """
    if not 0 <= q0 <= x:
        raise ValueError("need 0 <= q0 <= x")
    if j0 is not None and not 0 <= j0 < model.n_phases:
        raise IndexError("initial phase out of range")
    parts = _map_blocks(
        lambda size, rng: _first_passage_block(model, x, q0, j0, size, rng, cap), _blocks(n, seed), n_jobs
    )
    values = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    n_cens = sum(p[1] for p in parts)
    return SampleSet(values, "first-passage", int(seed), fingerprint(model), n_cens,
                     {"x": x, "q0": q0, "j0": j0})


# --------------------------------------------------------------------------
# Discretized chain X_n = (Q(n/m), J(n/m))


@dataclass(frozen=True)
class DiscreteKernel:
    """One-step transition matrix of the time-discretized fluid chain.

    States are pairs ``(level index, phase)`` numbered ``level * N + phase``,
    which is the lexicographic order (level first, then phase).
    """

    m: float
    delta: float
    n_levels: int
    n_phases: int
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def n_states(self) -> int:
        return self.n_levels * self.n_phases

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_levels) * self.delta

    def state(self, level_index: int, phase: int) -> int:
        return level_index * self.n_phases + phase

    def decode(self, s: int) -> tuple[float, int]:
        lv, ph = divmod(int(s), self.n_phases)
        return lv * self.delta, ph

    def level_index(self, x: float) -> int:
        k = x / self.delta
        if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(f"level {x!r} is not on the grid of spacing {self.delta!r}")
        return int(round(k))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_csv(self, path) -> None:
        coo = self.matrix.tocoo()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# m={self.m!r} delta={self.delta!r} n_levels={self.n_levels} n_phases={self.n_phases}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "prob"])
            order = np.lexsort((coo.col, coo.row))
            for k in order:
                w.writerow([int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))])


def _one_step(model: MarkovFluidModel, h: float, delta: float, n_levels: int) -> sp.csr_matrix:
    N = model.n_phases
    P = scipy.linalg.expm(model.generator * h)
    P = np.clip(P, 0.0, None)
    P /= P.sum(axis=1, keepdims=True)
    rows, cols, vals = [], [], []
    lv = np.arange(n_levels)
    for i in range(N):
        u = model.rates[i] * h / delta
        lo = math.floor(u + 1e-9)
        frac = u - lo
        if abs(frac) < 1e-9 or abs(frac - 1) < 1e-9:
            shifts = [(int(round(u)), 1.0)]
        else:
            shifts = [(lo, 1.0 - frac), (lo + 1, frac)]
        for shift, wgt in shifts:
            dest = np.clip(lv + shift, 0, n_levels - 1)
            for j in range(N):
                if P[i, j] == 0:
                    continue
                rows.append(lv * N + i)
                cols.append(dest * N + j)
                vals.append(np.full(n_levels, wgt * P[i, j]))
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_levels * N,) * 2
    )
    mat.sum_duplicates()
    return mat


def discretize_chain(
    model: MarkovFluidModel,
    m: float,
    delta: float | None = None,
    cap: float = 1.0,
    substeps: int = 1,
    max_states: int = 2_000_000,
) -> DiscreteKernel:
    """Kernel of ``(Q(n/m), J(n/m))`` on a level grid of spacing ``delta``.

    Over one step the phase moves according to ``expm(G / m)`` and the level
    is displaced by ``r_i / m`` for the phase ``i`` held at the start of the
    step (error O(1/m**2) per step). Displacements that fall between grid
    points are split linearly over the two neighbours. Levels are clamped to
    ``[0, cap]``, which reflects the level at zero.

    With ``substeps = k > 1`` the step is composed from ``k`` such sub-steps
    of length ``1 / (k m)``, which resolves phase switches inside a step more
    finely; ``delta`` must then resolve ``min |r_i| / (k m)``.

    Raises
    ------
    ModelError
        If ``delta`` exceeds ``min |r_i| / (k m)`` over the nonzero rates, or
        the state space would exceed ``max_states``.
    """
    if m <= 0 or substeps < 1:
        raise ValueError("need m > 0 and substeps >= 1")
    nonzero = np.abs(model.rates[model.rates != 0])
    h = 1.0 / (m * substeps)
    finest = float(nonzero.min()) * h if nonzero.size else None
    if delta is None:
        if finest is None:
            raise ModelError("all rates are zero; give delta explicitly")
        delta = finest
    if delta <= 0:
        raise ValueError("delta must be positive")
    if finest is not None and delta > finest * (1 + 1e-12):
        raise ModelError(f"delta={delta!r} is too coarse; one-step moves need delta <= {finest!r}")
    n_levels = int(math.floor(cap / delta + 1e-9)) + 1
    n_states = n_levels * model.n_phases
    if n_states > max_states:
        raise ModelError(f"state space of {n_states} states exceeds max_states={max_states}")
    step = _one_step(model, h, delta, n_levels)
    mat = step
    for _ in range(substeps - 1):
        mat = (mat @ step).tocsr()
    mat.eliminate_zeros()
    return DiscreteKernel(float(m), float(delta), n_levels, model.n_phases, mat)


@dataclass(frozen=True)
class DiscretePassage:
    """Law of ``tau^m(x)`` as the survival sequence ``P(tau^m > n)``, ``n = 0, 1, ...``.

    The sequence stops once the survival falls below ``floor`` (or at
    ``max_steps``); ``truncated_mass`` is the survival at the last step.
    """

    survival: np.ndarray
    m: float
    x: float

    @property
    def truncated_mass(self) -> float:
        return float(self.survival[-1])

    def survival_at(self, t) -> np.ndarray:
        """``P(tau^m / m > t)`` for continuous ``t``."""
        n = np.floor(np.asarray(t, dtype=float) * self.m + 1e-9).astype(np.int64)
        n = np.clip(n, 0, None)
        out = np.where(n < self.survival.size, self.survival[np.minimum(n, self.survival.size - 1)], 0.0)
        return out

    def cdf_at(self, t) -> np.ndarray:
        return 1.0 - self.survival_at(t)

    def log_survival(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.survival)


def first_passage_discrete(
    kernel: DiscreteKernel,
    x: float,
    initial,
    floor: float = 1e-13,
    max_steps: int = 10_000_000,
) -> DiscretePassage:
    """Exact survival sequence of ``tau^m(x) = min{n : X_n >= (x, first phase)}``.

    In the lexicographic order, ``X_n >= (x, first phase)`` means the level is
    at least ``x``. The chain is restricted to the taboo set ``level < x`` and
    the remaining mass is propagated step by step.

    Parameters
    ----------
    initial : array_like or tuple
        Either a probability vector over the kernel's states or a pair
        ``(q0, j0)`` for a point mass.
    """
    k = kernel.level_index(x)
    n_taboo = k * kernel.n_phases
    if isinstance(initial, tuple):
        q0, j0 = initial
        v0 = np.zeros(kernel.n_states)
        v0[kernel.state(kernel.level_index(q0), j0)] = 1.0
    else:
        v0 = np.asarray(initial, dtype=float)
        if v0.shape != (kernel.n_states,):
            raise ValueError("initial distribution has the wrong length")
    if k >= kernel.n_levels:
        raise ValueError("x lies beyond the level cap of the kernel")
    taboo_t = kernel.matrix[:n_taboo, :n_taboo].T.tocsr()
    v = v0[:n_taboo].copy()
    surv = [float(v.sum())]
    for _ in range(max_steps):
        if surv[-1] < floor:
            break
        v = taboo_t @ v
        surv.append(float(v.sum()))
    return DiscretePassage(np.array(surv), kernel.m, float(x))
