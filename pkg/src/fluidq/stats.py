"""Distribution distances and convex/concave envelopes."""

from __future__ import annotations

import numpy as np


def ks_continuous(samples, cdf) -> float:
    """Exact Kolmogorov distance between the ECDF of ``samples`` and a continuous ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max((i / n - f).max(), (f - (i - 1) / n).max()))


def ks_grid_bound(samples, grid, cdf_values) -> tuple[float, float]:
    """Bracket the Kolmogorov distance when the model CDF is known only on a grid.

    ``cdf_values`` must be nondecreasing on the increasing ``grid``. Between
    grid points both CDFs are monotone, which gives a rigorous upper bound;
    the largest gap at the grid points is a lower bound.

    Returns
    -------
    (lower, upper) : tuple of float
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    g = np.asarray(grid, dtype=float)
    F = np.asarray(cdf_values, dtype=float)
    E = np.searchsorted(x, g, side="right") / n
    E_left = np.searchsorted(x, g, side="left") / n
    lower = float(np.abs(E - F).max())
    # [0, g_0): both start at 0
    upper = max(E_left[0], F[0])
    # [g_k, g_{k+1})
    upper = max(upper, float(np.max(E_left[1:] - F[:-1], initial=0.0)),
                float(np.max(F[1:] - E[:-1], initial=0.0)))
    # [g_K, inf): both end at 1
    upper = max(upper, 1.0 - F[-1], 1.0 - E[-1])
    return lower, float(upper)


def ks_steps(survival_a, step_a, survival_b, step_b) -> float:
    """Kolmogorov distance between two lattice laws given as survival sequences.

    ``survival_a[n] = P(A > n * step_a)``; values beyond the stored sequence
    are taken as zero. The two steps must be commensurate (one a multiple of
    the other).
    """
    sa, sb = np.asarray(survival_a), np.asarray(survival_b)
    fine = min(step_a, step_b)
    ra, rb = step_a / fine, step_b / fine
    if abs(ra - round(ra)) > 1e-9 or abs(rb - round(rb)) > 1e-9:
        raise ValueError("lattice steps must be commensurate")
    ra, rb = int(round(ra)), int(round(rb))
    horizon = max(sa.size * ra, sb.size * rb)
    k = np.arange(horizon)
    ia, ib = k // ra, k // rb
    va = np.where(ia < sa.size, sa[np.minimum(ia, sa.size - 1)], 0.0)
    vb = np.where(ib < sb.size, sb[np.minimum(ib, sb.size - 1)], 0.0)
    return float(np.abs(va - vb).max())


def ks_samples_vs_steps(samples, survival, step) -> float:
    """Kolmogorov distance between an ECDF and a lattice law ``P(T > n step) = survival[n]``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    s = np.asarray(survival)
    lattice = np.arange(s.size) * step

    def model_cdf(t):
        k = np.floor(np.asarray(t) / step + 1e-9).astype(np.int64)
        return np.where(k < s.size, 1.0 - s[np.clip(k, 0, s.size - 1)], 1.0)

    # both are right-continuous step functions: compare at all jump points
    # (right values) and just before every sample (left limits)
    pts = np.concatenate([x, lattice])
    e_right = np.searchsorted(x, pts, side="right") / n
    d = np.abs(e_right - model_cdf(pts)).max()
    e_left = np.searchsorted(x, x, side="left") / n  # ties share one left limit
    # model CDF just left of x: lattice points strictly below x
    k_left = np.ceil(x / step - 1e-9).astype(np.int64) - 1
    f_left = np.where(k_left < 0, 0.0, np.where(k_left < s.size, 1.0 - s[np.clip(k_left, 0, s.size - 1)], 1.0))
    d = max(d, np.abs(e_left - f_left).max())
    return float(d)


def _hull(x, y, lower: bool):
    """Indices of the lower (convex) or upper (concave) hull of points sorted by x."""
    sign = 1.0 if lower else -1.0
    idx: list[int] = []
    for k in range(x.size):
        while len(idx) >= 2:
            i, j = idx[-2], idx[-1]
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            if sign * cross <= 0:
                idx.pop()
            else:
                break
        idx.append(k)
    return np.array(idx)


def greatest_convex_minorant(x, y):
    """Knots ``(xk, yk)`` of the greatest convex minorant of points sorted by ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = _hull(x, y, lower=True)
    return x[idx], y[idx]


def least_concave_majorant(x, y):
    """Knots ``(xk, yk)`` of the least concave majorant of points sorted by ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = _hull(x, y, lower=False)
    return x[idx], y[idx]
