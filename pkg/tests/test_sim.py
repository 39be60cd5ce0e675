import numpy as np
import pytest

from fluidq import (
    HyperExp,
    MarkovFluidModel,
    ModelError,
    OnOffModel,
    OnOffSource,
    SampleSet,
    busy_mean,
    discretize_chain,
    first_passage_discrete,
    first_passage_samples,
    lemma1_compose,
    markov_stability,
    simulate_busy,
    simulate_fluid_path,
    simulate_lemma1_rv,
)
from fluidq.sim import RunawayWarning, fingerprint
from fluidq.stats import ks_continuous, ks_samples_vs_steps, ks_steps

RAMP = MarkovFluidModel(np.zeros((1, 1)), np.array([1.0]))
DRAIN = MarkovFluidModel(np.zeros((1, 1)), np.array([-1.0]))


def test_simulate_busy_mean_matches_transform(single_model):
    s = simulate_busy(single_model, 0, 100_000, seed=3)
    assert s.kind == "busy-period" and len(s) == 100_000 and s.n_censored == 0
    assert abs(s.mean() - busy_mean(single_model, 0)) < 3 * s.standard_error()
    assert s.diagnostics["work_residual"] < 1e-9


def test_simulate_busy_is_reproducible(ams_model):
    a = simulate_busy(ams_model, 1, 20_000, seed=42)
    b = simulate_busy(ams_model, 1, 20_000, seed=42)
    c = simulate_busy(ams_model, 1, 20_000, seed=43)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.fingerprint == fingerprint(ams_model)


def test_simulate_busy_thread_count_does_not_change_values(ams_model, monkeypatch):
    one = simulate_busy(ams_model, 0, 20_000, seed=5, n_jobs=1)
    three = simulate_busy(ams_model, 0, 20_000, seed=5, n_jobs=3)
    monkeypatch.setenv("FLUIDQ_THREADS", "2")
    env = simulate_busy(ams_model, 0, 20_000, seed=5)
    assert np.array_equal(one.values, three.values) and np.array_equal(one.values, env.values)


def test_simulate_busy_no_competition_limit():
    # other sources (nearly) never start and r -> 1+: busy period = activity * r
    model = OnOffModel((OnOffSource(1.0, HyperExp.exponential(2.0), 1.0 + 1e-9),
                        OnOffSource(1e-12, HyperExp.exponential(2.0), 2.0)))
    s = simulate_busy(model, 0, 50_000, seed=1)
    assert ks_continuous(s.values, lambda t: 1 - np.exp(-2 * t)) < 0.01


def test_simulate_busy_cap_censors(single_model):
    with pytest.warns(RunawayWarning):
        s = simulate_busy(single_model, 0, 5_000, seed=0, cap=0.5)
    assert s.n_censored > 0 and np.all(s.values <= 0.5)


def test_sampleset_csv_roundtrip(tmp_path, ams_model):
    s = simulate_busy(ams_model, 0, 100, seed=9)
    path = tmp_path / "s.csv"
    s.to_csv(path)
    t = SampleSet.from_csv(path)
    assert np.array_equal(s.values, t.values)
    assert (t.kind, t.seed, t.fingerprint) == (s.kind, s.seed, s.fingerprint)
    assert path.read_text().startswith("# kind=busy-period seed=9")
    with pytest.raises(ValueError):
        SampleSet(np.array([-1.0]), "busy-period", 0, "x")


def test_lemma1_oracle_examples():
    s = simulate_lemma1_rv(2.0, [HyperExp.exponential(1.0)], [0.0], 50_000, seed=1)
    assert ks_continuous(s.values, lambda t: 1 - np.exp(-2 * t)) < 0.01
    l = HyperExp.exponential(1.0)
    s = simulate_lemma1_rv(1.0, [l], [1.0], 100_000, seed=2)
    mix = lemma1_compose(1.0, [l], [1.0])
    assert ks_continuous(s.values, mix.cdf) < 0.01
    assert abs(s.mean() - 2.0) < 3 * s.standard_error()  # (1/s)(1 + c * mean(l))


def test_lemma1_oracle_two_marks():
    ls = [HyperExp((0.5, 0.5), (1.0, 3.0)), HyperExp.exponential(0.5)]
    s = simulate_lemma1_rv(1.0, ls, [0.5, 0.5], 100_000, seed=4)
    assert ks_continuous(s.values, lemma1_compose(1.0, ls, [0.5, 0.5]).cdf) < 0.01


def test_fluid_path_examples(markov2):
    p = simulate_fluid_path(DRAIN, 10.0, q0=5.0)
    assert p.level_at(5.0) == pytest.approx(0.0) and p.level_at(9.0) == 0.0
    assert p.level_at(2.0) == pytest.approx(3.0)
    up = MarkovFluidModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), np.array([0.5, 2.0]))
    p = simulate_fluid_path(up, 50.0, q0=1.0, j0=0, seed=3)
    assert np.all(np.diff(p.levels) > 0)
    assert np.allclose(p.levels, 1.0 + p.netput(up.rates, p.times))


def test_fluid_path_reflection_and_slopes(markov2):
    p = simulate_fluid_path(markov2, 200.0, q0=0.0, j0=0, seed=7)
    assert np.all(p.levels >= 0)
    slopes = p.slopes()
    on_boundary = (p.levels[:-1] == 0) & (p.levels[1:] == 0)
    expect = np.where(on_boundary, np.maximum(markov2.rates[p.phases], 0.0), markov2.rates[p.phases])
    assert np.allclose(slopes, expect, atol=1e-9)


def test_fluid_path_long_run_netput(markov2):
    horizon = 1e4
    p = simulate_fluid_path(markov2, horizon, seed=11)
    edges = np.linspace(0, horizon, 101)
    batch = np.diff(p.netput(markov2.rates, edges)) / np.diff(edges)
    se = batch.std(ddof=1) / np.sqrt(batch.size)
    assert abs(batch.mean() - markov_stability(markov2)[0]) < 3 * se


def test_first_passage_examples(markov2):
    s = first_passage_samples(RAMP, 3.0, 0.0, 0, 100, seed=0)
    assert np.allclose(s.values, 3.0)
    s = first_passage_samples(markov2, 1.0, 1.0, 1, 100, seed=0)
    assert np.all(s.values == 0.0)
    s = first_passage_samples(markov2, 1.0, 0.0, None, 1000, seed=0)
    assert s.censored_fraction == 0.0
    with pytest.raises(ValueError):
        first_passage_samples(markov2, 1.0, 2.0, 0, 10)


def test_first_passage_censoring():
    # negative drift: the high level is rarely reached before the cap
    model = MarkovFluidModel(np.array([[-1.0, 1.0], [5.0, -5.0]]), np.array([-1.0, 1.0]))
    s = first_passage_samples(model, 20.0, 0.0, 0, 500, seed=1, cap=10.0)
    assert s.n_censored > 0 and s.censored_fraction == s.n_censored / 500


def test_first_passage_matches_discretization(markov2):
    s = first_passage_samples(markov2, 1.0, 0.0, 1, 100_000, seed=5)
    d = first_passage_discrete(discretize_chain(markov2, 256), 1.0, (0.0, 1))
    assert ks_samples_vs_steps(s.values, d.survival, 1 / 256) < 0.02


def test_discretize_kernel_properties(markov2):
    k = discretize_chain(markov2, 16)
    assert np.allclose(np.asarray(k.matrix.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    dense = k.dense()
    levels = np.repeat(k.levels, k.n_phases)
    rows, cols = np.nonzero(dense)
    assert np.abs(levels[cols] - levels[rows]).max() <= np.abs(markov2.rates).max() / 16 + 1e-12
    assert k.decode(k.state(3, 1)) == (3 * k.delta, 1)
    with pytest.raises(ModelError):
        discretize_chain(markov2, 16, delta=0.1)
    with pytest.raises(ModelError):
        discretize_chain(markov2, 16, cap=1e6)


def test_discretize_frozen_phase_is_deterministic_shift():
    # a single phase never switches (two-phase generators must be irreducible)
    for model, shift in ((RAMP, 1), (DRAIN, -1)):
        k = discretize_chain(model, 8, cap=2.0)
        dense = k.dense()
        assert dense[k.state(4, 0), k.state(4 + shift, 0)] == pytest.approx(1.0)
        assert dense[k.state(0, 0), k.state(max(shift, 0), 0)] == pytest.approx(1.0)


def test_discrete_passage_ramp_and_monotone(markov2):
    d = first_passage_discrete(discretize_chain(RAMP, 10, cap=3.0), 2.0, (0.0, 0))
    assert d.survival[19] == 1.0 and d.survival[20] == 0.0  # tau^m = ceil(m x / r)
    d = first_passage_discrete(discretize_chain(markov2, 32), 1.0, (0.0, 0))
    assert np.all(np.diff(d.survival) <= 1e-15)
    assert d.truncated_mass < 1e-13
    with pytest.raises(ValueError):
        first_passage_discrete(discretize_chain(markov2, 32), 0.51, (0.0, 0))


def test_discretization_converges(markov2):
    surv = {m: first_passage_discrete(discretize_chain(markov2, m), 1.0, (0.0, 1)).survival for m in (16, 32, 64, 128)}
    d = [ks_steps(surv[m], 1 / m, surv[2 * m], 1 / (2 * m)) for m in (16, 32, 64)]
    assert d[0] > d[1] > d[2]


def test_kernel_csv(tmp_path, markov2):
    k = discretize_chain(markov2, 4)
    path = tmp_path / "k.csv"
    k.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# m=4.0") and lines[1] == "row,col,prob"
    assert len(lines) == 2 + k.matrix.nnz
