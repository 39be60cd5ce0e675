"""Domain types for on-off and Markov-modulated fluid queues."""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .exceptions import ModelError

_WEIGHT_TOL = 1e-12
_ROW_TOL = 1e-12


@dataclass(frozen=True)
class HyperExp:
    """Finite mixture of exponential distributions.

    Density ``sum_k p_k * g_k * exp(-g_k * t)``. Terms are sorted by rate on
    construction and terms sharing a rate are merged, so ``rates`` is strictly
    increasing.

    Parameters
    ----------
    weights : sequence of float
        Mixing probabilities, each > 0, summing to one within 1e-12.
    rates : sequence of float
        Exponential rates, each > 0.
    """

    weights: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        g = np.asarray(self.rates, dtype=float).ravel()
        if w.size == 0 or w.size != g.size:
            raise ModelError("weights and rates must be non-empty and of equal length")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g))):
            raise ModelError("weights and rates must be finite")
        if np.any(w <= 0) or np.any(g <= 0):
            raise ModelError("weights and rates must be strictly positive")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ModelError(f"weights sum to {w.sum()!r}, expected 1")
        order = np.argsort(g, kind="stable")
        g, w = g[order], w[order]
        uniq, inverse = np.unique(g, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, w)
        object.__setattr__(self, "weights", tuple(float(x) for x in merged))
        object.__setattr__(self, "rates", tuple(float(x) for x in uniq))

    @classmethod
    def exponential(cls, rate: float) -> "HyperExp":
        return cls((1.0,), (rate,))

    @property
    def n_terms(self) -> int:
        return len(self.rates)

    @property
    def mean(self) -> float:
        return float(sum(p / g for p, g in zip(self.weights, self.rates)))

    @property
    def second_moment(self) -> float:
        return float(sum(2.0 * p / g**2 for p, g in zip(self.weights, self.rates)))

    def _arrays(self):
        return np.asarray(self.weights), np.asarray(self.rates)

    def pdf(self, t):
        p, g = self._arrays()
        t = np.asarray(t, dtype=float)
        return np.sum(p * g * np.exp(-np.multiply.outer(t, g)), axis=-1)

    def sf(self, t):
        p, g = self._arrays()
        t = np.asarray(t, dtype=float)
        return np.sum(p * np.exp(-np.multiply.outer(t, g)), axis=-1)

    def cdf(self, t):
        return 1.0 - self.sf(t)

    def hazard(self, t):
        return self.pdf(t) / self.sf(t)

    def laplace(self, theta):
        """Laplace transform ``sum_k p_k g_k / (theta + g_k)``; accepts complex input."""
        p, g = self._arrays()
        theta = np.asarray(theta)
        return np.sum(p * g / (theta[..., None] + g), axis=-1)

    def laplace_derivative(self, theta):
        p, g = self._arrays()
        theta = np.asarray(theta)
        return -np.sum(p * g / (theta[..., None] + g) ** 2, axis=-1)

    def sample(self, rng: np.random.Generator, size=None):
        p, g = self._arrays()
        if p.size == 1:
            return rng.exponential(1.0 / g[0], size=size)
        idx = rng.choice(p.size, size=size, p=p)
        return rng.exponential(1.0, size=size) / g[idx]

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "rates": list(self.rates)}


@dataclass(frozen=True)
class OnOffSource:
    """One on-off source: exponential silences, hyperexponential activities.

    ``peak_rate`` is the transmission rate while active, in units of the
    buffer's (unit) output rate.
    """

    silence_rate: float
    activity: HyperExp
    peak_rate: float

    def __post_init__(self):
        if not np.isfinite(self.silence_rate) or self.silence_rate <= 0:
            raise ModelError(f"silence_rate must be > 0, got {self.silence_rate!r}")
        if not np.isfinite(self.peak_rate) or self.peak_rate <= 1:
            raise ModelError(f"peak_rate must exceed the unit output rate, got {self.peak_rate!r}")
        if not isinstance(self.activity, HyperExp):
            raise ModelError("activity must be a HyperExp")

    @property
    def activity_mean(self) -> float:
        return self.activity.mean

    @property
    def load(self) -> float:
        """Long-run input rate ``r * m / (m + 1/lambda)``."""
        m = self.activity_mean
        return self.peak_rate * m / (m + 1.0 / self.silence_rate)


@dataclass(frozen=True)
class OnOffModel:
    """N independent on-off sources feeding a buffer drained at unit rate."""

    sources: tuple[OnOffSource, ...]

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) == 0:
            raise ModelError("an on-off model needs at least one source")
        object.__setattr__(self, "sources", sources)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def total_silence_rate(self) -> float:
        return float(sum(s.silence_rate for s in self.sources))

    @property
    def silence_rates(self) -> np.ndarray:
        return np.array([s.silence_rate for s in self.sources])

    @property
    def peak_rates(self) -> np.ndarray:
        return np.array([s.peak_rate for s in self.sources])

    def scaled(self, factor: float) -> "OnOffModel":
        """Same model with time sped up by ``factor`` (all rates multiplied)."""
        return OnOffModel(
            tuple(
                OnOffSource(
                    s.silence_rate * factor,
                    HyperExp(s.activity.weights, tuple(g * factor for g in s.activity.rates)),
                    s.peak_rate,
                )
                for s in self.sources
            )
        )

    def to_dict(self) -> dict:
        return {
            "sources": [
                {"lambda": s.silence_rate, "rate": s.peak_rate, "activity": s.activity.to_dict()}
                for s in self.sources
            ]
        }


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = np.flatnonzero(adj[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = list(nxt)
    return seen


def is_irreducible(generator) -> bool:
    """Strong connectivity of the off-diagonal support of ``generator``."""
    q = np.asarray(generator, dtype=float)
    adj = q > 0
    np.fill_diagonal(adj, False)
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


@dataclass(frozen=True)
class MarkovFluidModel:
    """Fluid queue modulated by an irreducible CTMC.

    Phases must be ordered by nondecreasing net rate; use
    :meth:`from_unsorted` to relabel an arbitrary model.

    Parameters
    ----------
    generator : array_like of shape (N, N)
        CTMC generator: nonnegative off-diagonal entries, zero row sums.
    rates : array_like of shape (N,)
        Net rate of change of the level in each phase.
    """

    generator: np.ndarray = field(repr=False)
    rates: np.ndarray

    def __post_init__(self):
        q = np.array(self.generator, dtype=float)
        r = np.array(self.rates, dtype=float).ravel()
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ModelError("generator must be a square matrix")
        if r.size != q.shape[0]:
            raise ModelError("rates must have one entry per phase")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
            raise ModelError("generator and rates must be finite")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ModelError("off-diagonal generator entries must be nonnegative")
        if np.any(np.abs(q.sum(axis=1)) > _ROW_TOL * max(1.0, np.abs(q).max())):
            raise ModelError("generator rows must sum to zero")
        if q.shape[0] > 1 and not is_irreducible(q):
            raise ModelError("generator is reducible")
        if np.any(np.diff(r) < 0):
            raise ModelError("phases must be ordered by nondecreasing rate; see from_unsorted")
        q.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "generator", q)
        object.__setattr__(self, "rates", r)

    @classmethod
    def from_unsorted(cls, generator, rates) -> "MarkovFluidModel":
        r = np.asarray(rates, dtype=float)
        order = np.argsort(r, kind="stable")
        q = np.asarray(generator, dtype=float)[np.ix_(order, order)]
        return cls(q, r[order])

    @property
    def n_phases(self) -> int:
        return self.rates.size

    def __eq__(self, other):
        if not isinstance(other, MarkovFluidModel):
            return NotImplemented
        return np.array_equal(self.generator, other.generator) and np.array_equal(
            self.rates, other.rates
        )

    def __hash__(self):
        return hash((self.generator.tobytes(), self.rates.tobytes()))

    def to_dict(self) -> dict:
        return {"generator": self.generator.tolist(), "rates": self.rates.tolist()}


def onoff_stability(model: OnOffModel) -> tuple[float, bool]:
    """Utilization ``sum_i r_i m_i / (m_i + 1/lambda_i)`` and whether it is < 1."""
    rho = float(sum(s.load for s in model.sources))
    return rho, rho < 1.0


def markov_stationary(model_or_generator) -> np.ndarray:
    """Stationary distribution of the phase process.

    Solves ``p G = 0``, ``sum(p) = 1`` by replacing one balance equation with
    the normalization.

    Raises
    ------
    ModelError
        If the generator is reducible or the linear system is singular.
    """
    if isinstance(model_or_generator, MarkovFluidModel):
        q = model_or_generator.generator
    else:
        q = np.asarray(model_or_generator, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ModelError("generator must be a square matrix")
        if q.shape[0] > 1 and not is_irreducible(q):
            raise ModelError("generator is reducible")
    n = q.shape[0]
    a = q.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        p = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ModelError("singular generator") from exc
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def markov_stability(model: MarkovFluidModel) -> tuple[float, bool]:
    """Mean drift ``sum_i p_i r_i`` under the stationary phase law; stable iff < 0."""
    p = markov_stationary(model)
    drift = float(p @ model.rates)
    return drift, drift < 0.0


def check_stable(model: OnOffModel, allow_unstable: bool = False) -> float:
    rho, stable = onoff_stability(model)
    if not stable and not allow_unstable:
        raise ModelError(f"model is unstable (utilization {rho:.6g} >= 1); pass allow_unstable=True to override")
    return rho

