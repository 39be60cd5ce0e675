import warnings

import numpy as np
import pytest

from fluidq import (
    ConvergenceError,
    HyperExp,
    ModelError,
    OnOffModel,
    OnOffSource,
    busy_density,
    busy_lt_closed_form_single,
    busy_mean,
    cm_check,
    solve_busy_lt,
)
from fluidq.busy import BusyLT


def mean_oracle(model):
    """Busy-period means from differentiating the fixed point at 0 (a linear system)."""
    lam, r = model.silence_rates, model.peak_rates
    m_act = np.array([s.activity_mean for s in model.sources])
    N = model.n_sources
    A = np.eye(N)
    for i in range(N):
        for j in range(N):
            A[i, j] -= m_act[i] * (r[i] * lam[j] - (lam[i] if i == j else 0.0))
    return np.linalg.solve(A, m_act * r)


def test_single_source_oracle(single_model):
    theta = 0.01 * 2.0 ** np.arange(30)
    sol = solve_busy_lt(single_model, theta)
    assert np.abs(sol.pi[:, 0] - busy_lt_closed_form_single(1.0, 3.0, 2.0, theta)).max() < 1e-10
    assert solve_busy_lt(single_model, 1.0).pi[0, 0] == pytest.approx(3 - np.sqrt(6), abs=1e-10)
    assert np.all(sol.residual < 1e-12)
    assert sol.monotone_excess <= 1e-15


def test_closed_form_examples():
    assert busy_lt_closed_form_single(1.0, 3.0, 2.0, 1.0) == pytest.approx(3 - np.sqrt(6))
    assert busy_lt_closed_form_single(1.0, 3.0, 2.0, 0.0) == pytest.approx(1.0)
    big = busy_lt_closed_form_single(1.0, 3.0, 2.0, np.logspace(0, 8, 20))
    assert np.all(np.diff(big) < 0) and big[-1] < 1e-7
    with pytest.raises(ModelError):
        busy_lt_closed_form_single(2.0, 1.0, 2.0, 0.0)


def test_pi_properties(ams_model):
    theta = np.linspace(0, 20, 41)
    sol = solve_busy_lt(ams_model, theta)
    assert np.allclose(sol.pi[0], 1.0, atol=1e-10)
    assert np.all((sol.pi > 0) & (sol.pi <= 1))
    assert np.all(np.diff(sol.pi, axis=0) <= 1e-15)
    assert np.allclose(sol.pi[:, 0], sol.pi[:, 1], atol=1e-14)  # symmetric sources


def test_sharp_lower_bound_holds_on_random_models():
    rng = np.random.default_rng(11)
    for _ in range(10):
        N = int(rng.integers(1, 4))
        srcs = [OnOffSource(float(rng.uniform(0.1, 1.0)), HyperExp.exponential(float(rng.uniform(4, 10))),
                            float(rng.uniform(1.05, 2.0))) for _ in range(N)]
        model = OnOffModel(tuple(srcs))
        sol = solve_busy_lt(model, np.logspace(-2, 2, 15), allow_unstable=True)
        assert sol.sharp_bound_excess <= 1e-14
        assert sol.monotone_excess <= 1e-14


def test_complex_arguments_agree_with_closed_form(single_model):
    theta = np.array([0.5 + 2j, 3.0 - 1j])
    got = solve_busy_lt(single_model, theta).pi[:, 0]
    want = busy_lt_closed_form_single(1.0, 3.0, 2.0, theta)
    assert np.allclose(got, want, atol=1e-11)


def test_refusals(single_model):
    unstable = OnOffModel((OnOffSource(1.0, HyperExp.exponential(1.0), 2.0),))
    with pytest.raises(ModelError):
        solve_busy_lt(unstable, 1.0)
    with pytest.raises(ValueError):
        solve_busy_lt(single_model, -1.0)
    with pytest.raises(ValueError):
        solve_busy_lt(single_model, 1.0, tol=0.0)
    with pytest.raises(ConvergenceError) as info:
        solve_busy_lt(single_model, 1e-3, max_iter=3)
    assert info.value.residual > 0


def test_mp_path_matches_double(ams_model):
    import mpmath

    lt = BusyLT(ams_model, 0)
    with mpmath.workdps(40):
        v = lt.evaluate_mp(mpmath.mpf("0.7"))
    assert float(v) == pytest.approx(float(lt(0.7)), abs=1e-12)


def test_busy_mean_matches_oracles(single_model, ams_model):
    a = 1.0 * (2.0 - 1.0)
    assert busy_mean(single_model, 0) == pytest.approx(2.0 / (3.0 - a), rel=1e-7)
    assert busy_mean(ams_model, 0) == pytest.approx(mean_oracle(ams_model)[0], rel=1e-7)
    model = OnOffModel((OnOffSource(0.5, HyperExp((0.4, 0.6), (2.0, 7.0)), 1.5),
                        OnOffSource(1.2, HyperExp.exponential(6.0), 2.5)))
    expect = mean_oracle(model)
    for i in range(2):
        assert busy_mean(model, i) == pytest.approx(expect[i], rel=1e-6)


def test_busy_mean_time_rescaling(ams_model):
    assert busy_mean(ams_model.scaled(2.0), 0) == pytest.approx(busy_mean(ams_model, 0) / 2, rel=1e-6)


def test_busy_mean_degenerate_limit():
    # r -> 1+ : the busy period collapses to the activity, scaled by r
    model = OnOffModel((OnOffSource(1.0, HyperExp.exponential(2.0), 1.0 + 1e-6),))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert busy_mean(model, 0) == pytest.approx(0.5, rel=1e-5)


def test_busy_density_integrates_to_one(single_model):
    t = np.linspace(0.05, 200, 400)
    bd = busy_density(single_model, 0, t)
    assert abs(bd.cdf[-1] - 1.0) < 1e-3
    assert np.all(bd.density >= 0) and np.all(np.diff(bd.cdf) >= 0)
    ok = ~np.isnan(bd.hazard)
    assert np.allclose(bd.hazard[ok], bd.density[ok] / bd.survival[ok])
    assert np.all(bd.untrusted[~ok])


def test_busy_density_degenerate_is_activity_law():
    model = OnOffModel((OnOffSource(1.0, HyperExp.exponential(2.0), 1.0 + 1e-9),))
    t = np.linspace(0.1, 3, 20)
    bd = busy_density(model, 0, t)
    assert np.abs(bd.density - 2 * np.exp(-2 * t)).max() < 1e-6


def test_busy_density_backends_agree(ams_model):
    t = np.linspace(0.1, 4, 12)
    e = busy_density(ams_model, 0, t, method="euler")
    g = busy_density(ams_model, 0, t, method="gs")
    assert np.abs(e.density - g.density).max() < 1e-6


def test_ams_hazard_nonincreasing_and_cm(ams_model):
    t = np.linspace(0.05, 6, 80)
    bd = busy_density(ams_model, 0, t)
    h = bd.hazard[~np.isnan(bd.hazard)]
    assert np.all(np.diff(h) <= 1e-8)
    assert cm_check(BusyLT(ams_model, 0), t, order=6).passed


def test_hyperexp_activity_gives_cm_busy_period():
    model = OnOffModel((OnOffSource(0.8, HyperExp((0.3, 0.7), (1.5, 9.0)), 1.8),
                        OnOffSource(0.4, HyperExp.exponential(4.0), 2.2)))
    assert cm_check(BusyLT(model, 0), np.linspace(0.05, 4, 60), order=5).passed
