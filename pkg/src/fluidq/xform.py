"""Laplace-transform evaluation, mixture composition and numerical inversion.

Two inversion backends are provided:

* ``"gs"`` -- Gaver-Stehfest, evaluated in mpmath extended precision when the
  transform supports it (real abscissae only);
* ``"euler"`` -- Abate-Whitt Euler summation of the Bromwich integral in
  double-precision complex arithmetic.

Each backend also reports a per-point error estimate obtained by rerunning it
at a lower order; points whose estimate exceeds the tolerance are flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import mpmath
import numpy as np

from .exceptions import ModelError, NumericalError
from .model import HyperExp

GS_ORDER = 16
EULER_ORDER = 15
_ORDER_DROP = 4


class LaplaceTransform:
    """Something that evaluates as ``theta -> E[exp(-theta X)]``.

    Subclasses implement :meth:`__call__` for numpy (real or complex) input.
    Transforms that can also be evaluated in mpmath extended precision set
    ``supports_mp = True`` and implement :meth:`evaluate_mp`.
    """

    supports_mp = False

    def __call__(self, theta):
        raise NotImplementedError

    def evaluate_mp(self, theta):
        raise NotImplementedError(f"{type(self).__name__} has no extended-precision path")


class FunctionLT(LaplaceTransform):
    """Wrap a plain callable as a transform.

    If ``mp_capable`` is true the same callable is invoked with mpmath numbers
    for the Gaver-Stehfest backend, so it must only use arithmetic operators.
    """

    def __init__(self, func: Callable, mp_capable: bool = False):
        self.func = func
        self.supports_mp = mp_capable

    def __call__(self, theta):
        return self.func(np.asarray(theta))

    def evaluate_mp(self, theta):
        if not self.supports_mp:
            return super().evaluate_mp(theta)
        return self.func(theta)


class MixtureLT(LaplaceTransform):
    """Transform of a :class:`HyperExp`, with its partial-fraction data.

    ``residues[k] = p_k * g_k`` and ``poles[k] = -g_k``.
    """

    supports_mp = True

    def __init__(self, dist: HyperExp):
        self.dist = dist

    @property
    def poles(self) -> np.ndarray:
        return -np.asarray(self.dist.rates)

    @property
    def residues(self) -> np.ndarray:
        return np.asarray(self.dist.weights) * np.asarray(self.dist.rates)

    def __call__(self, theta):
        return self.dist.laplace(theta)

    def evaluate_mp(self, theta):
        return mpmath.fsum(
            mpmath.mpf(p) * g / (theta + g) for p, g in zip(self.dist.weights, self.dist.rates)
        )

    def pdf(self, t):
        return self.dist.pdf(t)

    def cdf(self, t):
        return self.dist.cdf(t)


class ErlangLT(LaplaceTransform):
    """Erlang(k, mu) transform ``(mu / (mu + theta))**k``; a non-CM reference case."""

    supports_mp = True

    def __init__(self, shape: int, rate: float):
        self.shape = int(shape)
        self.rate = float(rate)

    def __call__(self, theta):
        return (self.rate / (self.rate + np.asarray(theta))) ** self.shape

    def evaluate_mp(self, theta):
        return (self.rate / (self.rate + theta)) ** self.shape

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        k, mu = self.shape, self.rate
        return mu**k * t ** (k - 1) * np.exp(-mu * t) / math.factorial(k - 1)


# --------------------------------------------------------------------------
# Mixture composition


def _merge_poles(l_list: Sequence[HyperExp], c_list: Sequence[float]):
    """Merge identical rates across the l_j, weighting by c_j * p_jk."""
    coef: dict[float, float] = {}
    for dist, c in zip(l_list, c_list):
        if c == 0:
            continue
        for p, g in zip(dist.weights, dist.rates):
            coef[g] = coef.get(g, 0.0) + c * p
    rates = np.array(sorted(coef))
    return rates, np.array([coef[g] for g in rates])


def _bisect(f, lo: float, hi: float, rel_width: float = 1e-14) -> float:
    flo = f(lo)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rel_width * max(abs(lo), abs(hi)) or mid in (lo, hi):
            return mid
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lemma1_compose(
    s: float, l_list: Sequence[HyperExp], c_list: Sequence[float]
) -> HyperExp:
    """Exponential mixture with transform ``k(theta + sum_j c_j (1 - l_j(theta)))``.

    ``k`` is the Exp(``s``) transform and each ``l_j`` a hyperexponential
    transform, so the result is the rational function::

        s / (theta + s + c - sum_j sum_k c_j p_jk g_jk / (theta + g_jk)),  c = sum_j c_j

    The denominator is increasing between consecutive poles ``-g``, so it has
    exactly one zero in each gap, one in ``(-min g, 0)`` and one below
    ``-max g``. The zeros are located by bisection and the weights follow from
    the residues ``s / D'(z)``.

    Parameters
    ----------
    s : float
        Rate of the exponential ``k``.
    l_list : sequence of HyperExp
        The mark distributions ``l_j``.
    c_list : sequence of float
        Nonnegative intensities ``c_j``; same length as ``l_list``.

    Returns
    -------
    HyperExp
        With one term per distinct pole plus one.
    """
    if not s > 0 or not math.isfinite(s):
        raise ModelError("s must be a positive finite rate")
    if len(l_list) != len(c_list):
        raise ModelError("l_list and c_list must have the same length")
    c_arr = np.asarray(c_list, dtype=float)
    if np.any(~np.isfinite(c_arr)) or np.any(c_arr < 0):
        raise ModelError("each c_j must be finite and >= 0")
    gam, w = _merge_poles(l_list, c_arr)
    if gam.size == 0:
        return HyperExp.exponential(s)
    c = float(w.sum())

    def denom(theta):
        return theta + s + c - np.sum(w * gam / (theta + gam))

    def denom_prime(theta):
        return 1.0 + np.sum(w * gam / (theta + gam) ** 2)

    def bracket_near(pole, side):
        # side=+1: just right of the pole (denominator -> -inf); side=-1: left (-> +inf)
        for nudge in (1e-9, 1e-12, 1e-15):
            x = pole + side * nudge * abs(pole)
            if (denom(x) < 0) == (side > 0):
                return x
        raise NumericalError(f"could not bracket a zero next to pole {pole!r}")

    poles = -gam[::-1]  # increasing: -max g, ..., -min g
    zeros = []
    lo = poles[0] - (s + 2.0 * c + 1.0)
    if denom(lo) >= 0:
        raise NumericalError("left bracket of the outermost zero failed")
    zeros.append(_bisect(denom, lo, bracket_near(poles[0], -1)))
    for left, right in zip(poles[:-1], poles[1:]):
        zeros.append(_bisect(denom, bracket_near(left, +1), bracket_near(right, -1)))
    zeros.append(_bisect(denom, bracket_near(poles[-1], +1), 0.0))

    z = np.array(zeros)
    new_rates = -z
    residues = np.array([s / denom_prime(x) for x in z])
    weights = residues / new_rates
    if np.any(weights <= 0) or np.any(new_rates <= 0):
        raise NumericalError("non-positive weight or rate in composed mixture")
    total = weights.sum()
    if abs(total - 1.0) > 1e-10:
        raise NumericalError(f"composed weights sum to {total!r}")
    return HyperExp(tuple(weights / total), tuple(new_rates))


def lemma1_transform(s: float, l_list: Sequence[HyperExp], c_list: Sequence[float]):
    """Evaluate ``k(theta + sum_j c_j (1 - l_j(theta)))`` directly (no root finding)."""

    def beta(theta):
        theta = np.asarray(theta)
        arg = theta + sum(c * (1.0 - l.laplace(theta)) for l, c in zip(l_list, c_list))
        return s / (s + arg)

    return beta


# --------------------------------------------------------------------------
# Inversion


@lru_cache(maxsize=None)
def _stehfest_coefficients(order: int, dps: int):
    with mpmath.workdps(dps):
        m = order
        coeffs = []
        for k in range(1, 2 * m + 1):
            acc = mpmath.mpf(0)
            for j in range((k + 1) // 2, min(k, m) + 1):
                acc += (
                    mpmath.mpf(j) ** (m + 1)
                    / mpmath.factorial(m)
                    * mpmath.binomial(m, j)
                    * mpmath.binomial(2 * j, j)
                    * mpmath.binomial(j, k - j)
                )
            coeffs.append((-1) ** (m + k) * acc)
        return tuple(coeffs)


@lru_cache(maxsize=None)
def _euler_nodes(order: int):
    m = order
    xi = np.zeros(2 * m + 1)
    xi[0] = 0.5
    xi[1 : m + 1] = 1.0
    xi[2 * m] = 2.0**-m
    for k in range(1, m):
        xi[2 * m - k] = xi[2 * m - k + 1] + 2.0**-m * math.comb(m, k)
    k = np.arange(2 * m + 1)
    eta = (-1.0) ** k * xi
    beta = m * math.log(10.0) / 3.0 + 1j * math.pi * k
    return beta, eta, 10.0 ** (m / 3.0)


def _euler(f: Callable, t: np.ndarray, order: int) -> np.ndarray:
    beta, eta, scale = _euler_nodes(order)
    theta = beta[None, :] / t[:, None]
    vals = np.real(f(theta))
    return scale / t * (vals @ eta)


def _gs_point(f_mp: Callable, t: float, order: int, dps: int) -> float:
    coeffs = _stehfest_coefficients(order, dps)
    with mpmath.workdps(dps):
        ln2_t = mpmath.log(2) / mpmath.mpf(t)
        total = mpmath.fsum(v * f_mp(k * ln2_t) for k, v in enumerate(coeffs, start=1))
        return float(total * ln2_t)


def _gs(f_mp: Callable, t: np.ndarray, order: int) -> np.ndarray:
    dps = max(30, int(math.ceil(2.2 * 2 * order)))
    return np.array([_gs_point(f_mp, float(x), order, dps) for x in t])


def _gs_double(f: Callable, t: np.ndarray, order: int) -> np.ndarray:
    coeffs = np.array([float(v) for v in _stehfest_coefficients(order, 50)])
    ln2_t = math.log(2.0) / t
    k = np.arange(1, 2 * order + 1)
    vals = np.real(f(np.outer(ln2_t, k)))
    return ln2_t * (vals @ coeffs)


@dataclass(frozen=True)
class InversionResult:
    """Pointwise output of :func:`invert_lt`.

    ``density_error`` and ``cdf_error`` are backend self-estimates (difference
    from a lower-order run). ``untrusted`` marks points where either estimate
    exceeds ``tol``.
    """

    t: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    density_error: np.ndarray
    cdf_error: np.ndarray
    untrusted: np.ndarray
    method: str

    @property
    def survival(self) -> np.ndarray:
        return 1.0 - self.cdf


def _invert_one(lt: LaplaceTransform, func, func_mp, t, method, order):
    lo = max(2, order - _ORDER_DROP)
    if method == "euler":
        return _euler(func, t, order), _euler(func, t, lo)
    if method == "gs":
        if lt.supports_mp:
            return _gs(func_mp, t, order), _gs(func_mp, t, lo)
        # without extended precision only low orders are usable
        hi = min(order, 7)
        return _gs_double(func, t, hi), _gs_double(func, t, max(2, hi - 2))
    raise ValueError(f"unknown inversion method {method!r}; expected 'gs' or 'euler'")


def invert_lt(
    lt: LaplaceTransform,
    t_grid,
    method: str = "euler",
    order: int | None = None,
    tol: float = 1e-6,
    want_cdf: bool = True,
) -> InversionResult:
    """Recover density and CDF values from a Laplace transform.

    Parameters
    ----------
    lt : LaplaceTransform
        Transform of a probability density on ``(0, inf)``.
    t_grid : array_like
        Strictly positive time points.
    method : {"euler", "gs"}
        Inversion backend.
    order : int, optional
        Backend order (Euler ``M`` or Stehfest half-length). Defaults to
        ``EULER_ORDER`` / ``GS_ORDER``.
    tol : float
        Flag points whose self-estimated error exceeds this.
    want_cdf : bool
        Also invert ``lt(theta) / theta`` for the CDF.

    Returns
    -------
    InversionResult
        The CDF is projected onto ``[0, 1]`` and made nondecreasing.
    """
    method = {"gaver-stehfest": "gs", "stehfest": "gs"}.get(method, method)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise ValueError("inversion grid must be finite and strictly positive")
    if order is None:
        order = EULER_ORDER if method == "euler" else GS_ORDER

    dens, dens_lo = _invert_one(lt, lt, lt.evaluate_mp, t, method, order)
    dens_err = np.abs(dens - dens_lo)
    if want_cdf:
        cdf, cdf_lo = _invert_one(
            lt, lambda th: lt(th) / th, lambda th: lt.evaluate_mp(th) / th, t, method, order
        )
        cdf_err = np.abs(cdf - cdf_lo)
        order_idx = np.argsort(t, kind="stable")
        proj = np.clip(cdf[order_idx], 0.0, 1.0)
        proj = np.maximum.accumulate(proj)
        cdf = np.empty_like(proj)
        cdf[order_idx] = proj
    else:
        cdf = np.full_like(t, np.nan)
        cdf_err = np.zeros_like(t)
    untrusted = (dens_err > tol) | (cdf_err > tol)
    return InversionResult(t, dens, cdf, dens_err, cdf_err, untrusted, method)


# --------------------------------------------------------------------------
# Complete monotonicity


@dataclass(frozen=True)
class CMCheckResult:
    """Outcome of :func:`cm_check`.

    ``first_violated_order`` is ``None`` when every order passed. ``margins``
    holds, per order, the smallest value of ``(-1)**k * diff(f, k)`` divided
    by its tolerance (values below -1 are violations).
    """

    passed: bool
    first_violated_order: int | None
    worst_location: float | None
    margins: tuple[float, ...]
    tolerances: tuple[float, ...]
    error_estimate: float


def cm_check(
    lt: LaplaceTransform,
    grid,
    order: int = 6,
    method: str = "euler",
    inversion_order: int | None = None,
    tol_factor: float = 10.0,
    floor: float = 1e-12,
) -> CMCheckResult:
    """Numerically test complete monotonicity of the density behind ``lt``.

    The density is inverted on a uniform grid and the alternating-sign forward
    differences ``(-1)**k * Delta^k f`` are required to be ``>= -tol_k`` for
    ``k = 1..order``, where ``tol_k = tol_factor * 2**k * err`` and ``err`` is
    the largest inversion error estimate on the grid (``2**k`` bounds the
    amplification of pointwise errors by the k-th difference).

    This is a numerical diagnostic, not a proof.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < order + 2:
        raise ValueError("grid must be 1-D with more than order + 1 points")
    if not 1 <= order <= 8:
        raise ValueError("order must be between 1 and 8")
    steps = np.diff(g)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
        raise ValueError("grid must be increasing with uniform spacing")
    inv = invert_lt(lt, g, method=method, order=inversion_order, want_cdf=False)
    f = inv.density
    err = float(max(inv.density_error.max(), floor * max(1.0, np.abs(f).max())))
    margins, tols = [], []
    first = None
    where = None
    d = f.copy()
    for k in range(1, order + 1):
        d = np.diff(d)
        signed = (-1) ** k * d
        tol_k = tol_factor * 2.0**k * err
        margins.append(float(signed.min() / tol_k))
        tols.append(tol_k)
        if first is None and np.any(signed < -tol_k):
            first = k
            where = float(g[int(np.argmin(signed))])
    return CMCheckResult(first is None, first, where, tuple(margins), tuple(tols), err)
