"""Hazard-rate estimation and ageing-class verdicts (DFR, IFR, TP2).

DFR and IFR are judged on the shape of the log-survival function, which is
convex for DFR and concave for IFR. From samples the statistic is the largest
vertical gap between the empirical log-survival and its greatest convex
minorant (DFR) or least concave majorant (IFR); the acceptance threshold is
the 95% point of the same statistic under a parametric bootstrap from the
exponential law, which lies on the boundary of both classes and is the least
favourable null (the gap is invariant under rescaling time, so one threshold
serves every mean). Bootstrapping instead from the projection of the data onto
the class (``null="projection"``) is available but rejects true members too
often.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .sim import DiscreteKernel, DiscretePassage, SampleSet
from .stats import greatest_convex_minorant, least_concave_majorant

MIN_SAMPLES = 1000
MAX_CENSORED = 0.01
N_BOOTSTRAP = 200


def _values(samples) -> tuple[np.ndarray, float]:
    if isinstance(samples, SampleSet):
        return np.asarray(samples.values), samples.censored_fraction
    return np.asarray(samples, dtype=float).ravel(), 0.0


def _check_samples(x: np.ndarray, censored: float):
    if x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if censored > MAX_CENSORED:
        raise ValueError(f"censored fraction {censored:.3%} exceeds {MAX_CENSORED:.0%}")


@dataclass(frozen=True)
class HazardCurve:
    """Kernel hazard estimate with bootstrap pointwise half-widths (95%)."""

    t: np.ndarray
    hazard: np.ndarray
    half_width: np.ndarray
    survival: np.ndarray
    method: str
    bandwidth: float = float("nan")

    def cumulative(self) -> np.ndarray:
        """Trapezoidal integral of the hazard from ``t[0]``."""
        steps = np.diff(self.t) * 0.5 * (self.hazard[1:] + self.hazard[:-1])
        return np.concatenate([[0.0], np.cumsum(steps)])


def _binned_kde(centers, counts, n, t, h):
    z = (t[:, None] - centers[None, :]) / h
    zr = (t[:, None] + centers[None, :]) / h
    k = (np.exp(-0.5 * z * z) + np.exp(-0.5 * zr * zr)) / (h * math.sqrt(2 * math.pi))
    return k @ counts / n


def hazard_estimate(
    samples,
    bandwidth: float | None = None,
    t_grid=None,
    n_boot: int = N_BOOTSTRAP,
    seed: int = 0,
    survival_threshold: float = 0.01,
) -> HazardCurve:
    """Estimate ``f(t) / (1 - F(t))`` from positive samples.

    The density is a Gaussian kernel estimate reflected at zero (computed on
    bins of width ``bandwidth / 10``) and the survival function is empirical.
    Half-widths come from multinomial bootstrap resampling of the bins.

    Parameters
    ----------
    bandwidth : float, optional
        Kernel standard deviation; defaults to Silverman's rule.
    t_grid : array_like, optional
        Evaluation points; defaults to 100 points up to the
        ``1 - survival_threshold`` sample quantile. Points where the empirical
        survival is at or below ``survival_threshold`` are dropped.
    n_boot : int
        Bootstrap resamples for the half-widths; 0 skips them (NaN widths).
    """
    x, censored = _values(samples)
    _check_samples(x, censored)
    n = x.size
    if bandwidth is None:
        sd = min(x.std(ddof=1), (np.quantile(x, 0.75) - np.quantile(x, 0.25)) / 1.34)
        bandwidth = 0.9 * sd * n ** -0.2
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    xs = np.sort(x)
    if t_grid is None:
        top = np.quantile(x, 1.0 - survival_threshold)
        t_grid = np.linspace(bandwidth / 2, top, 100)
    t = np.asarray(t_grid, dtype=float)
    surv = 1.0 - np.searchsorted(xs, t, side="right") / n
    keep = surv > survival_threshold
    t, surv = t[keep], surv[keep]

    w = bandwidth / 10.0
    reach = t.max() + 6 * bandwidth
    n_bins = int(math.ceil(reach / w))
    edges = np.arange(n_bins + 1) * w
    counts = np.histogram(np.minimum(x, reach), bins=edges)[0].astype(float)
    tail = float(np.sum(x >= reach))
    counts[-1] -= tail  # values at the clipping point belong to the tail
    centers = 0.5 * (edges[1:] + edges[:-1])
    dens = _binned_kde(centers, counts, n, t, bandwidth)
    haz = dens / surv

    rng = np.random.default_rng(seed)
    probs = np.append(counts, tail) / n
    boot = np.empty((n_boot, t.size))
    t_bin = np.minimum((t / w).astype(np.int64), n_bins - 1)
    frac = t / w - t_bin
    for b in range(n_boot):
        c = rng.multinomial(n, probs).astype(float)
        cb, tb = c[:-1], c[-1]
        above = np.cumsum(cb[::-1])[::-1]  # mass in bins >= k
        s_b = (above[t_bin] - frac * cb[t_bin] + tb) / n
        boot[b] = _binned_kde(centers, cb, n, t, bandwidth) / np.maximum(s_b, 1.0 / n)
    if n_boot > 0:
        lo, hi = np.quantile(boot, [0.025, 0.975], axis=0)
        half = 0.5 * (hi - lo)
    else:
        half = np.full(t.size, np.nan)
    return HazardCurve(t, haz, half, surv, "reflected-gaussian-kde", float(bandwidth))


# --------------------------------------------------------------------------
# Verdicts


@dataclass(frozen=True)
class Verdict:
    """Result of a shape test; ``passed`` is ``statistic <= threshold``."""

    claim: str
    passed: bool
    statistic: float
    threshold: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _log_survival_points(x: np.ndarray, n_points: int, min_at_risk: int):
    """Corners of the empirical log-survival staircase at about ``n_points`` ranks.

    Each selected distinct value contributes its left limit (placed one ulp
    below it) and its value, so atoms show up as jumps; the origin is included.
    """
    n = x.size
    u, counts = np.unique(x, return_counts=True)
    above = n - np.cumsum(counts)
    ok = above >= min_at_risk
    u, counts, above = u[ok], counts[ok], above[ok]
    if u.size > n_points:
        pick = np.unique(np.linspace(0, u.size - 1, n_points).round().astype(np.int64))
        u, counts, above = u[pick], counts[pick], above[pick]
    if u.size == 0:
        return np.zeros(1), np.zeros(1)
    left = np.nextafter(u, -np.inf)
    t = np.column_stack([left, u]).ravel()
    y = np.log(np.column_stack([above + counts, above]).ravel() / n)
    if t[0] > 0:
        t, y = np.concatenate([[0.0], t]), np.concatenate([[0.0], y])
    keep = np.concatenate([[True], np.diff(t) > 0])
    return t[keep], y[keep]


def _envelope_gap(t, y, convex: bool):
    if t.size < 3:
        return 0.0, None
    if convex:
        kx, ky = greatest_convex_minorant(t, y)
        gap = y - np.interp(t, kx, ky)
    else:
        kx, ky = least_concave_majorant(t, y)
        gap = np.interp(t, kx, ky) - y
    k = int(np.argmax(gap))
    return float(gap[k]), float(t[k])


def _sample_projection(kx, ky, size, rng):
    """Draw from the law with log-survival piecewise linear through the knots."""
    e = rng.exponential(1.0, size)
    h = -ky  # cumulative hazard at the knots, nondecreasing
    slope = (h[-1] - h[-2]) / (kx[-1] - kx[-2]) if kx.size >= 2 else 1.0
    slope = max(slope, 1e-12)
    inside = e <= h[-1]
    out = np.empty(size)
    # np.interp needs strictly increasing abscissae; flat hazard pieces have no mass
    hh, idx = np.unique(h, return_index=True)
    out[inside] = np.interp(e[inside], hh, kx[idx])
    out[~inside] = kx[-1] + (e[~inside] - h[-1]) / slope
    return out


@lru_cache(maxsize=64)
def _exponential_null(n, convex, n_boot, seed, n_points, min_at_risk):
    # the vertical gap is invariant under rescaling time, so Exp(1) covers every mean
    rng = np.random.default_rng(seed)
    null = np.empty(n_boot)
    for b in range(n_boot):
        tb, yb = _log_survival_points(rng.exponential(1.0, n), n_points, min_at_risk)
        null[b] = _envelope_gap(tb, yb, convex)[0]
    null.setflags(write=False)
    return null


def _shape_check(x, convex, n_boot, seed, alpha, n_points, min_at_risk, claim, null):
    t, y = _log_survival_points(x, n_points, min_at_risk)
    stat, where = _envelope_gap(t, y, convex)
    if t.size < 3:
        return Verdict(claim, True, 0.0, 0.0, {"degenerate": True, "n": int(x.size)})
    if null == "exponential":
        draws = _exponential_null(x.size, convex, n_boot, seed, n_points, min_at_risk)
    elif null == "projection":
        kx, ky = (greatest_convex_minorant if convex else least_concave_majorant)(t, y)
        rng = np.random.default_rng(seed)
        draws = np.empty(n_boot)
        for b in range(n_boot):
            tb, yb = _log_survival_points(_sample_projection(kx, ky, x.size, rng), n_points, min_at_risk)
            draws[b] = _envelope_gap(tb, yb, convex)[0]
    else:
        raise ValueError(f"unknown null {null!r}")
    threshold = float(np.quantile(draws, 1.0 - alpha))
    return Verdict(
        claim,
        bool(stat <= threshold),
        stat,
        threshold,
        {"worst_t": where, "n": int(x.size), "n_boot": n_boot, "alpha": alpha, "seed": seed, "null": null},
    )


def _exact_sequence_check(log_s, tol, convex, claim, spacing):
    d2 = np.diff(log_s, 2)
    signed = -d2 if convex else d2
    if signed.size == 0:
        return Verdict(claim, True, 0.0, tol, {"degenerate": True, "exact": True})
    k = int(np.argmax(signed))
    stat = float(signed[k])
    return Verdict(
        claim,
        bool(stat <= tol),
        stat,
        tol,
        {"exact": True, "worst_index": k + 1, "worst_t": (k + 1) * spacing,
         "n_violations": int(np.sum(signed > tol)), "length": int(log_s.size)},
    )


def _survival_window(survival, floor):
    s = np.asarray(survival, dtype=float)
    keep = s > floor
    if not keep.all():
        s = s[: int(np.argmin(keep))]
    return np.log(s)


def dfr_check(
    samples=None,
    *,
    t_grid=None,
    cdf=None,
    tol: float = 1e-8,
    n_boot: int = N_BOOTSTRAP,
    seed: int = 0,
    alpha: float = 0.05,
    n_points: int = 1000,
    min_at_risk: int = 100,
    null: str = "exponential",
) -> Verdict:
    """Test whether a law has decreasing failure rate (convex log-survival).

    Give either ``samples`` (bootstrap-calibrated test) or a uniform ``t_grid``
    with model ``cdf`` values, e.g. from transform inversion; the latter
    passes iff every second difference of ``log(1 - cdf)`` is ``>= -tol``
    where the survival exceeds 1e-8.

    Parameters
    ----------
    null : {"exponential", "projection"}
        Law the bootstrap threshold is simulated from (see module docstring).
    min_at_risk : int
        Rank points with fewer remaining samples are ignored.
    """
    if cdf is not None:
        t = np.asarray(t_grid, dtype=float)
        if np.ptp(np.diff(t)) > 1e-9 * np.diff(t).mean():
            raise ValueError("t_grid must be uniform")
        log_s = _survival_window(1.0 - np.asarray(cdf, dtype=float), 1e-8)
        return _exact_sequence_check(log_s, tol, True, "DFR", float(t[1] - t[0]))
    x, censored = _values(samples)
    _check_samples(x, censored)
    return _shape_check(x, True, n_boot, seed, alpha, n_points, min_at_risk, "DFR", null)


def ifr_check(
    samples=None,
    *,
    survival=None,
    tol: float = 1e-12,
    floor: float = 1e-13,
    n_boot: int = N_BOOTSTRAP,
    seed: int = 0,
    alpha: float = 0.05,
    n_points: int = 1000,
    min_at_risk: int = 100,
    null: str = "exponential",
) -> Verdict:
    """Test whether a law has increasing failure rate (concave log-survival).

    ``survival`` may be an exact lattice survival sequence (or a
    :class:`~fluidq.sim.DiscretePassage`); it then passes iff every second
    difference of its logarithm is ``<= tol`` (entries below ``floor`` are
    ignored).
    """
    if survival is not None:
        spacing = 1.0
        if isinstance(survival, DiscretePassage):
            spacing = 1.0 / survival.m
            survival = survival.survival
        log_s = _survival_window(survival, floor)
        return _exact_sequence_check(log_s, tol, False, "IFR", spacing)
    x, censored = _values(samples)
    _check_samples(x, censored)
    return _shape_check(x, False, n_boot, seed, alpha, n_points, min_at_risk, "IFR", null)


# --------------------------------------------------------------------------
# TP2


def _conditional_cdf(kernel) -> np.ndarray:
    """``F[w, z] = P(X_1 <= z | X_0 = w)`` in the kernel's state order."""
    mat = kernel.dense() if isinstance(kernel, DiscreteKernel) else np.asarray(kernel, dtype=float)
    return np.cumsum(mat, axis=1)


def _describe(kernel, s):
    if isinstance(kernel, DiscreteKernel):
        level, phase = kernel.decode(s)
        return {"state": int(s), "level": level, "phase": phase}
    return {"state": int(s)}


def _violation_report(kernel, F, z1, z2, w1, w2):
    return {
        "z1": _describe(kernel, z1), "z2": _describe(kernel, z2),
        "w1": _describe(kernel, w1), "w2": _describe(kernel, w2),
        "P(X1<=z1|w1)": float(F[w1, z1]), "P(X1<=z2|w1)": float(F[w1, z2]),
        "P(X1<=z1|w2)": float(F[w2, z1]), "P(X1<=z2|w2)": float(F[w2, z2]),
    }


def _scan_brute(F, tol):
    """All quadruples z1 < z2, w1 < w2; returns (worst deficit, quadruple, count)."""
    S = F.shape[0]
    worst, arg, count = -np.inf, None, 0
    for w1 in range(S - 1):
        a = F[w1]
        b = F[w1 + 1 :]
        # cross[w2, z1, z2] = F[w2,z1] F[w1,z2] - F[w1,z1] F[w2,z2]  (deficit > 0 is a violation)
        cross = b[:, :, None] * a[None, None, :] - a[None, :, None] * b[:, None, :]
        iu = np.triu_indices(S, k=1)
        d = cross[:, iu[0], iu[1]]
        count += int(np.sum(d > tol))
        k = np.unravel_index(np.argmax(d), d.shape)
        if d[k] > worst:
            worst = float(d[k])
            arg = (int(iu[0][k[1]]), int(iu[1][k[1]]), w1, w1 + 1 + int(k[0]))
    return worst, arg, count


def _scan_support(kernel_mat, F, tol):
    """Exact scan using that each ``F[w, .]`` only changes on the support of row ``w``.

    For a pair ``w1 < w2`` the deficit depends on ``(z1, z2)`` only through the
    runs of constancy of both rows, so it suffices to evaluate it at the union
    of the two supports; each breakpoint pair is weighted by its run lengths to
    count violating quadruples exactly.
    """
    S = F.shape[0]
    supports = [np.flatnonzero(row > 0) for row in kernel_mat]
    width = max(max(len(s) for s in supports), 1)
    cand = np.zeros((S, width), dtype=np.int64)
    for w, s in enumerate(supports):
        if len(s):
            cand[w, : len(s)] = s
            cand[w, len(s):] = s[-1]
    worst, arg, count = -np.inf, None, 0
    for w1 in range(S - 1):
        w2 = np.arange(w1 + 1, S)
        c = np.concatenate([np.broadcast_to(cand[w1], (w2.size, width)), cand[w2]], axis=1)
        c.sort(axis=1)
        # run length of each breakpoint (zero for repeated entries)
        nxt = np.concatenate([c[:, 1:], np.full((w2.size, 1), S)], axis=1)
        runs = nxt - c
        f1 = F[w1][c]
        f2 = F[w2[:, None], c]
        # deficit for breakpoints (a, b) with c[a] < c[b]
        d = f2[:, :, None] * f1[:, None, :] - f1[:, :, None] * f2[:, None, :]
        d = np.where(c[:, :, None] < c[:, None, :], d, -np.inf)
        bad = d > tol
        if bad.any():
            count += int(np.sum(bad * runs[:, :, None] * runs[:, None, :]))
        k = np.unravel_index(np.argmax(d), d.shape)
        if d[k] > worst:
            worst = float(d[k])
            arg = (int(c[k[0], k[1]]), int(c[k[0], k[2]]), w1, int(w2[k[0]]))
    return worst, arg, count


def tp2_check(kernel, mode: str = "exhaustive", tol: float = 1e-12, n_samples: int = 100_000,
              seed: int = 0) -> Verdict:
    """Check that ``P(X_1 <= z | X_0 = w)`` is TP2 in ``(z, w)``.

    For every ``z1 < z2`` and ``w1 < w2`` (lexicographic state order) the
    cross-product form ``F(z1|w1) F(z2|w2) >= F(z2|w1) F(z1|w2)`` is
    required, up to ``tol``. Quadruples where a conditioning event
    ``{X_1 <= z2}`` is null satisfy it trivially (both sides vanish).

    Parameters
    ----------
    kernel : DiscreteKernel or array_like
        Row-stochastic transition matrix.
    mode : {"exhaustive", "brute", "sampled"}
        ``"exhaustive"`` is exact and uses the sparsity of the rows;
        ``"brute"`` enumerates every quadruple (small kernels only);
        ``"sampled"`` checks ``n_samples`` random quadruples.

    Returns
    -------
    Verdict
        ``statistic`` is the largest deficit ``F(z2|w1) F(z1|w2) - F(z1|w1) F(z2|w2)``;
        the worst quadruple and its four conditional probabilities are in
        ``diagnostics``.
    """
    mat = kernel.dense() if isinstance(kernel, DiscreteKernel) else np.asarray(kernel, dtype=float)
    F = np.cumsum(mat, axis=1)
    S = F.shape[0]
    if mode == "brute":
        if S > 120:
            raise ValueError("brute mode is limited to 120 states; use 'exhaustive'")
        worst, arg, count = _scan_brute(F, tol)
    elif mode == "exhaustive":
        worst, arg, count = _scan_support(mat, F, tol)
    elif mode == "sampled":
        rng = np.random.default_rng(seed)
        z = np.sort(rng.integers(0, S, size=(n_samples, 2)), axis=1)
        w = np.sort(rng.integers(0, S, size=(n_samples, 2)), axis=1)
        ok = (z[:, 0] < z[:, 1]) & (w[:, 0] < w[:, 1])
        z, w = z[ok], w[ok]
        d = F[w[:, 0], z[:, 1]] * F[w[:, 1], z[:, 0]] - F[w[:, 0], z[:, 0]] * F[w[:, 1], z[:, 1]]
        count = int(np.sum(d > tol))
        k = int(np.argmax(d)) if d.size else 0
        worst = float(d[k]) if d.size else 0.0
        arg = (int(z[k, 0]), int(z[k, 1]), int(w[k, 0]), int(w[k, 1])) if d.size else None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    worst = max(worst, 0.0) if arg is not None else 0.0
    diag = {"mode": mode, "n_states": S, "n_violations": count}
    if arg is not None and worst > tol:
        diag["worst_quadruple"] = _violation_report(kernel, F, *arg)
    return Verdict("TP2", bool(worst <= tol), worst, tol, diag)


def adversarial_kernel() -> np.ndarray:
    """A 4-state kernel (2 levels x 2 phases, lexicographic) that is not TP2.

    State 1 (level 0, phase 1) sends most mass to the bottom state while
    state 0 below it sends most mass to the top, so conditional CDFs cross.
    """
    return np.array(
        [
            [0.1, 0.2, 0.3, 0.4],
            [0.7, 0.1, 0.1, 0.1],
            [0.25, 0.25, 0.25, 0.25],
            [0.1, 0.1, 0.1, 0.7],
        ]
    )
