import json

import numpy as np
import pytest

from fluidq import (
    HyperExp,
    SampleSet,
    discretize_chain,
    dfr_check,
    first_passage_discrete,
    hazard_estimate,
    ifr_check,
    tp2_check,
)
from fluidq.reliability import adversarial_kernel
from fluidq.stats import (
    greatest_convex_minorant,
    ks_continuous,
    ks_grid_bound,
    ks_samples_vs_steps,
    ks_steps,
    least_concave_majorant,
)

RNG = np.random.default_rng(2024)
EXP = RNG.exponential(0.5, 20_000)
MIX = HyperExp((0.5, 0.5), (1.0, 3.0)).sample(RNG, 20_000)
ERL = RNG.gamma(2.0, 1.0, 20_000)


# ---- envelopes and distances


def test_envelopes():
    x = np.arange(6.0)
    y = np.array([0.0, 2.0, 1.0, 3.0, 0.5, 0.0])
    kx, ky = greatest_convex_minorant(x, y)
    assert np.all(np.interp(x, kx, ky) <= y + 1e-15)
    assert np.all(np.diff(np.diff(ky) / np.diff(kx)) >= 0)
    kx, ky = least_concave_majorant(x, y)
    assert np.all(np.interp(x, kx, ky) >= y - 1e-15)
    assert np.all(np.diff(np.diff(ky) / np.diff(kx)) <= 0)
    line = np.array([0.0, -1.0, -2.0])
    assert greatest_convex_minorant(np.arange(3.0), line)[0].size == 2


def test_ks_helpers():
    x = np.array([0.1, 0.4, 0.4, 0.9])
    assert ks_continuous(x, lambda t: t) == pytest.approx(0.35)
    lo, hi = ks_grid_bound(x, np.linspace(0.05, 1, 40), np.linspace(0.05, 1, 40))
    assert lo <= 0.35 + 1e-12 <= hi + 1e-12 and hi - lo < 0.05
    assert ks_steps([1.0, 0.5, 0.0], 1.0, [1.0, 0.8, 0.5, 0.5, 0.0], 0.5) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        ks_steps([1.0], 1.0, [1.0], 0.3)
    # lattice law with an atom at 1 against samples sitting exactly on it
    assert ks_samples_vs_steps(np.ones(10), np.array([1.0, 1.0, 0.0]), 0.5) == 0.0


# ---- hazard


def test_hazard_exponential_is_flat():
    curve = hazard_estimate(EXP, seed=1)
    inner = (curve.t > 0.2) & (curve.survival > 0.05)
    assert np.all(np.abs(curve.hazard[inner] - 2.0) < 3 * curve.half_width[inner] + 0.05)
    assert np.all(curve.hazard >= 0)


def test_hazard_mixture_decreases_and_erlang_increases():
    d = HyperExp((0.5, 0.5), (1.0, 3.0))
    curve = hazard_estimate(MIX, seed=1)
    inner = curve.t > 0.3
    assert np.all(np.abs(curve.hazard[inner] - d.hazard(curve.t[inner])) < 3 * curve.half_width[inner] + 0.05)
    assert curve.hazard[inner][0] > curve.hazard[-1]
    curve = hazard_estimate(ERL, seed=1)
    inner = curve.t > 0.5
    exact = curve.t[inner] / (1 + curve.t[inner])  # Erlang-2 hazard, mu = 1
    assert np.all(np.abs(curve.hazard[inner] - exact) < 3 * curve.half_width[inner] + 0.05)
    assert curve.hazard[inner][-1] > curve.hazard[inner][0]


def test_hazard_integrates_back_to_survival():
    curve = hazard_estimate(EXP, t_grid=np.linspace(0.1, 1.5, 60), seed=3)
    s = curve.survival[0] * np.exp(-curve.cumulative())
    assert np.abs(s - curve.survival).max() < 0.02


def test_hazard_refusals():
    with pytest.raises(ValueError):
        hazard_estimate(EXP[:999])
    with pytest.raises(ValueError):
        hazard_estimate(EXP, bandwidth=-1.0)
    censored = SampleSet(EXP, "first-passage", 0, "f", n_censored=1000)
    with pytest.raises(ValueError):
        hazard_estimate(censored)


# ---- DFR / IFR


def test_dfr_ifr_on_reference_laws():
    assert dfr_check(EXP).passed and ifr_check(EXP).passed
    assert dfr_check(MIX).passed and not ifr_check(MIX).passed
    assert ifr_check(ERL).passed and not dfr_check(ERL).passed


def test_boundary_class_passes_with_high_probability():
    rng = np.random.default_rng(7)
    outcomes = [dfr_check(rng.exponential(3.0, 10_000), seed=k).passed and
                ifr_check(rng.exponential(3.0, 10_000), seed=k).passed for k in range(10)]
    assert np.mean(outcomes) >= 0.8


def test_verdict_shape_and_json():
    v = dfr_check(EXP, seed=5)
    assert v.passed == (v.statistic <= v.threshold)
    doc = json.loads(v.to_json())
    assert doc["claim"] == "DFR" and doc["diagnostics"]["seed"] == 5
    assert dfr_check(EXP, seed=5) == v


def test_point_mass_is_degenerate_pass():
    v = ifr_check(np.full(5000, 2.0))
    assert v.passed and v.diagnostics["degenerate"]


def test_shape_check_refusals():
    with pytest.raises(ValueError):
        dfr_check(EXP[:500])
    with pytest.raises(ValueError):
        ifr_check(SampleSet(EXP, "first-passage", 0, "f", n_censored=400))
    with pytest.raises(ValueError):
        dfr_check(EXP, null="uniform")


def test_exact_sequence_modes(markov2):
    geometric = 0.9 ** np.arange(50)
    assert ifr_check(survival=geometric).passed
    assert not ifr_check(survival=np.array([1.0, 0.5, 0.4, 0.35])).passed
    t = np.linspace(0.05, 5, 100)
    mix = HyperExp((0.5, 0.5), (1.0, 3.0))
    assert dfr_check(t_grid=t, cdf=mix.cdf(t)).passed
    assert not dfr_check(t_grid=t, cdf=1 - (1 + t) * np.exp(-t)).passed
    with pytest.raises(ValueError):
        dfr_check(t_grid=t**2, cdf=mix.cdf(t**2))
    d = first_passage_discrete(discretize_chain(markov2, 16), 1.0, (0.0, 1))
    v = ifr_check(survival=d)
    assert v.diagnostics["exact"] and v.passed == (v.statistic <= 1e-12)


# ---- TP2


def test_tp2_independence_kernel_passes_with_equality():
    row = np.array([0.1, 0.2, 0.3, 0.4])
    v = tp2_check(np.tile(row, (4, 1)))
    assert v.passed and v.statistic <= 1e-15


def test_tp2_adversarial_kernel_fails_with_quadruple():
    v = tp2_check(adversarial_kernel(), mode="brute")
    assert not v.passed
    q = v.diagnostics["worst_quadruple"]
    lhs = q["P(X1<=z1|w1)"] * q["P(X1<=z2|w2)"]
    rhs = q["P(X1<=z2|w1)"] * q["P(X1<=z1|w2)"]
    assert rhs - lhs == pytest.approx(v.statistic)
    assert q["z1"]["state"] < q["z2"]["state"] and q["w1"]["state"] < q["w2"]["state"]


def test_tp2_modes_agree_on_random_kernels():
    rng = np.random.default_rng(3)
    for _ in range(25):
        P = rng.random((8, 8)) * (rng.random((8, 8)) < 0.4)
        P[:, 0] += 1e-3
        P /= P.sum(axis=1, keepdims=True)
        a, b = tp2_check(P, "exhaustive"), tp2_check(P, "brute")
        assert a.statistic == pytest.approx(b.statistic, abs=1e-15)
        assert a.diagnostics["n_violations"] == b.diagnostics["n_violations"]
        s = tp2_check(P, "sampled", n_samples=20_000)
        assert s.statistic <= a.statistic + 1e-15


def test_tp2_monotone_random_walk_passes():
    # birth-death walk with reflecting ends is TP2 in the natural order
    S = 12
    P = np.zeros((S, S))
    for i in range(S):
        P[i, max(i - 1, 0)] += 0.3
        P[i, i] += 0.4
        P[i, min(i + 1, S - 1)] += 0.3
    assert tp2_check(P).passed


def test_tp2_reports_kernel_states(markov2):
    v = tp2_check(discretize_chain(markov2, 16))
    if not v.passed:
        q = v.diagnostics["worst_quadruple"]
        assert set(q["w1"]) == {"state", "level", "phase"}
    with pytest.raises(ValueError):
        tp2_check(discretize_chain(markov2, 64, cap=1.0), mode="brute")
    with pytest.raises(ValueError):
        tp2_check(adversarial_kernel(), mode="nope")
