"""Busy-period transforms of the on-off fluid queue.

The transforms ``pi_i`` of the busy periods ``P_i`` (started by an activity of
source ``i`` in an empty system) solve, pointwise in ``theta``::

    pi_i = alpha_i( r_i theta + lambda_i (r_i - 1)(1 - pi_i)
                    + sum_{j != i} lambda_j r_i (1 - pi_j) )

and are the decreasing limit of the iteration started from ``pi = 1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from .exceptions import ConvergenceError, ModelError, NumericalError
from .model import OnOffModel, check_stable
from .xform import LaplaceTransform, invert_lt

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10**6
SURVIVAL_FLOOR = 1e-8


class ExtrapolationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class BusySolution:
    """Solution of the busy-period fixed-point system on a ``theta`` grid.

    Attributes
    ----------
    pi : ndarray of shape (n_theta, N)
        ``pi[k, i]`` is the transform of ``P_i`` at ``theta[k]``.
    iterations : ndarray of shape (n_theta,)
        Iterations until the largest change fell below ``tol``.
    residual : ndarray of shape (n_theta, N)
        ``|pi - alpha_i(argument(pi))|`` at the returned point.
    monotone_excess : float
        Largest increase ``pi_{m+1} - pi_m`` seen over all iterations (real
        ``theta`` only; <= 0 means the iterates never increased).
    bound_excess : float
        Largest ``alpha_i(r_i theta + lambda) - pi_{i,m}`` over ``m >= 1``
        (> 0 means the lower bound ``alpha_i(r_i theta + lambda)`` was crossed).
        That bound only follows from the iteration when every ``r_i <= 1``.
    sharp_bound_excess : float
        As ``bound_excess`` for ``alpha_i(r_i theta + r_i lambda - lambda_i)``,
        which bounds every iterate for any ``r_i > 1``.
    """

    model: OnOffModel
    theta: np.ndarray
    pi: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    monotone_excess: float
    bound_excess: float
    sharp_bound_excess: float

    def source(self, i: int) -> np.ndarray:
        return self.pi[:, i]


def _arguments(theta, pi, lam, r):
    # r_i theta + r_i sum_j lambda_j (1 - pi_j) - lambda_i (1 - pi_i)
    idle = 1.0 - pi
    weighted = idle @ lam
    return r * theta[:, None] + r * weighted[:, None] - lam * idle


def _alphas(model: OnOffModel, x):
    out = np.empty_like(x)
    for i, src in enumerate(model.sources):
        out[:, i] = src.activity.laplace(x[:, i])
    return out


def solve_busy_lt(
    model: OnOffModel,
    theta,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    allow_unstable: bool = False,
) -> BusySolution:
    """Solve the busy-period system for all sources at each ``theta``.

    Iterates ``pi_{m+1} = alpha(argument(pi_m))`` from ``pi_0 = 1`` until the
    largest change is below ``tol``. ``theta`` may be complex (Re >= 0), which
    the Euler inversion backend needs.

    Raises
    ------
    ModelError
        If the model is unstable and ``allow_unstable`` is false.
    ConvergenceError
        If some point has not converged after ``max_iter`` iterations.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    check_stable(model, allow_unstable)
    th = np.atleast_1d(np.asarray(theta))
    if np.iscomplexobj(th):
        if np.any(th.real < 0):
            raise ValueError("theta must have nonnegative real part")
    else:
        th = th.astype(float)
        if np.any(th < 0):
            raise ValueError("theta must be nonnegative")
    shape = th.shape
    th = th.ravel()
    real = not np.iscomplexobj(th)
    lam = model.silence_rates
    r = model.peak_rates
    n, N = th.size, model.n_sources

    lower = sharp = None
    if real:
        lower = _alphas(model, r[None, :] * th[:, None] + lam.sum())
        sharp = _alphas(model, r[None, :] * (th[:, None] + lam.sum()) - lam[None, :])

    pi = np.ones((n, N), dtype=th.dtype)
    iterations = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    mono = bound = sharp_bound = -np.inf
    for it in range(1, max_iter + 1):
        cur = pi[active]
        new = _alphas(model, _arguments(th[active], cur, lam, r))
        step = np.abs(new - cur).max(axis=1)
        if real:
            mono = max(mono, float((new - cur).max()))
            bound = max(bound, float((lower[active] - new).max()))
            sharp_bound = max(sharp_bound, float((sharp[active] - new).max()))
        pi[active] = new
        done = step < tol
        iterations[active[done]] = it
        active = active[~done]
        if active.size == 0:
            break
    else:
        resid = np.abs(_alphas(model, _arguments(th, pi, lam, r)) - pi).max()
        raise ConvergenceError(
            f"{active.size} theta points did not converge in {max_iter} iterations", residual=float(resid)
        )
    residual = np.abs(_alphas(model, _arguments(th, pi, lam, r)) - pi)
    return BusySolution(
        model=model,
        theta=th.reshape(shape),
        pi=pi.reshape(shape + (N,)),
        iterations=iterations.reshape(shape),
        residual=residual.reshape(shape + (N,)),
        monotone_excess=mono,
        bound_excess=bound,
        sharp_bound_excess=sharp_bound,
    )


def busy_lt_closed_form_single(lam: float, mu: float, r: float, theta):
    """Busy-period transform for one source with Exp(``mu``) activities.

    With ``a = lam (r - 1)`` the fixed point is the root with ``pi(0) = 1`` of
    ``a pi**2 - (mu + r theta + a) pi + mu = 0``.
    """
    a = lam * (r - 1.0)
    if r <= 1 or lam <= 0 or mu <= 0:
        raise ModelError("need lam > 0, mu > 0 and r > 1")
    if a >= mu:
        raise ModelError(f"unstable: lam (r - 1) = {a!r} >= mu = {mu!r}")
    theta = np.asarray(theta)
    b = mu + r * theta + a
    disc = np.sqrt(b * b - 4.0 * a * mu)
    # (b - disc) / (2a) rewritten to avoid cancellation when a is small
    return 2.0 * mu / (b + disc)


class BusyLT(LaplaceTransform):
    """The transform ``pi_i`` of one busy period as a :class:`LaplaceTransform`.

    The extended-precision path seeds Newton's method on the fixed-point system
    with the double-precision iterate.
    """

    supports_mp = True

    def __init__(self, model: OnOffModel, source: int, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, allow_unstable: bool = False):
        if not 0 <= source < model.n_sources:
            raise IndexError(f"source index {source} out of range")
        self.model = model
        self.source = source
        self.tol = tol
        self.max_iter = max_iter
        self.allow_unstable = allow_unstable
        self._mp_cache = lru_cache(maxsize=65536)(self._evaluate_mp_all)

    def __call__(self, theta):
        theta = np.asarray(theta)
        sol = solve_busy_lt(self.model, theta, self.tol, self.max_iter, self.allow_unstable)
        return sol.pi[..., self.source].reshape(theta.shape)

    def evaluate_mp(self, theta):
        return self._mp_cache(mpmath.mpf(theta), mpmath.mp.dps)[self.source]

    def _evaluate_mp_all(self, theta, dps):
        model = self.model
        start = solve_busy_lt(model, float(theta), self.tol, self.max_iter, self.allow_unstable).pi[0]
        lam = [mpmath.mpf(x) for x in model.silence_rates]
        r = [mpmath.mpf(x) for x in model.peak_rates]
        N = model.n_sources
        terms = [list(zip(s.activity.weights, s.activity.rates)) for s in model.sources]
        pi = mpmath.matrix([mpmath.mpf(float(x)) for x in start])
        eps = mpmath.mpf(10) ** (-(dps - 4))
        for _ in range(60):
            idle = [1 - pi[j] for j in range(N)]
            weighted = mpmath.fsum(lam[j] * idle[j] for j in range(N))
            args = [r[i] * theta + r[i] * weighted - lam[i] * idle[i] for i in range(N)]
            alpha = [mpmath.fsum(p * g / (x + g) for p, g in t) for t, x in zip(terms, args)]
            dalpha = [-mpmath.fsum(p * g / (x + g) ** 2 for p, g in t) for t, x in zip(terms, args)]
            F = mpmath.matrix([alpha[i] - pi[i] for i in range(N)])
            J = mpmath.matrix(N, N)
            for i in range(N):
                for j in range(N):
                    J[i, j] = dalpha[i] * (-r[i] * lam[j] + (lam[i] if i == j else 0)) - (1 if i == j else 0)
            delta = mpmath.lu_solve(J, -F)
            pi = pi + delta
            if mpmath.norm(delta, mpmath.inf) < eps:
                return tuple(pi[j] for j in range(N))
        raise NumericalError("extended-precision Newton refinement did not converge")


@dataclass(frozen=True)
class BusyDensity:
    """Density, CDF and hazard of ``P_i`` recovered by transform inversion.

    ``hazard`` is NaN where the survival function is at or below
    ``SURVIVAL_FLOOR``; those points are also marked in ``untrusted``.
    """

    t: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    survival: np.ndarray
    hazard: np.ndarray
    untrusted: np.ndarray
    method: str


def busy_density(
    model: OnOffModel,
    i: int,
    t_grid,
    method: str = "euler",
    order: int | None = None,
    tol: float = DEFAULT_TOL,
    allow_unstable: bool = False,
) -> BusyDensity:
    """Invert ``pi_i`` to density, CDF and hazard values on ``t_grid``."""
    check_stable(model, allow_unstable)
    lt = BusyLT(model, i, tol=tol, allow_unstable=allow_unstable)
    inv = invert_lt(lt, t_grid, method=method, order=order, tol=1e-6)
    density = np.clip(inv.density, 0.0, None)
    survival = 1.0 - inv.cdf
    ok = survival > SURVIVAL_FLOOR
    hazard = np.full_like(density, np.nan)
    hazard[ok] = density[ok] / survival[ok]
    return BusyDensity(inv.t, density, inv.cdf, survival, hazard, inv.untrusted | ~ok, inv.method)


def busy_mean(
    model: OnOffModel,
    i: int,
    h0: float | None = None,
    levels: int = 8,
    rtol: float = 1e-7,
    allow_unstable: bool = False,
) -> float:
    """Mean of ``P_i`` as ``-pi_i'(0)``, by Richardson extrapolation.

    Uses the one-sided quotients ``(1 - pi_i(h)) / h`` at ``h = h0 / 2**k``,
    whose error expands in powers of ``h``. A :class:`ExtrapolationWarning` is
    issued if the last two diagonal entries differ by more than ``rtol``.
    """
    check_stable(model, allow_unstable)
    if h0 is None:
        src = model.sources[i]
        h0 = 0.05 / (src.peak_rate * src.activity_mean)
    h = h0 / 2.0 ** np.arange(levels)
    pi = solve_busy_lt(model, h, tol=1e-15, allow_unstable=allow_unstable).pi[:, i]
    table = [(1.0 - pi) / h]
    for k in range(1, levels):
        prev = table[-1]
        table.append((2.0**k * prev[1:] - prev[:-1]) / (2.0**k - 1.0))
    diag = [row[0] for row in table]
    # the finest levels are dominated by the solver tolerance; choose the
    # diagonal entry where successive estimates agree best
    gaps = np.abs(np.diff(diag))
    k = int(np.argmin(gaps))
    best = diag[k + 1]
    if not math.isfinite(best) or best <= 0 or gaps[k] > rtol * abs(best):
        warnings.warn(
            f"Richardson extrapolation of the busy-period mean did not settle (gap {gaps[k]:.3g})",
            ExtrapolationWarning,
            stacklevel=2,
        )
    return float(best)
