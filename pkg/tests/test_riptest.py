import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gencs.coherence import optimal_distribution, subspace_coherence
from gencs.generator import random_model, range_subspace_basis
from gencs.measurement import (DFT2, MeasurementEnsemble, SamplingDistribution, apply_sdf, draw_ensemble,
                               support_projection)
from gencs.riptest import (HypothesisViolationError, recovery_rate, rip_deviation, rip_rate, rip_trial_suite,
                           sample_complexity_recovery, sample_complexity_rip, write_rip_report)


def oracle_rate(k, d, kd, mu, delta, eps):
    # written out independently: 4 mu^2 / delta^2 * (2 k d ln(2 e kd / k) + ln(4k / eps))
    return 4 * mu * mu / (delta * delta) * (2 * k * d * (math.log(2) + 1 + math.log(kd) - math.log(k))
                                            + math.log(4) + math.log(k) - math.log(eps))


def test_recovery_rate_value():
    assert recovery_rate(2, 2, 4, 1.0, 0.5) == pytest.approx(16 * (8 * math.log(4 * math.e) + math.log(16)), rel=1e-14)
    assert recovery_rate(2, 2, 4, 1.0, 0.5) == pytest.approx(349.81, abs=0.01)
    assert sample_complexity_recovery(2, 2, 4, 1.0, 0.5) == 350


def test_rip_rate_value():
    assert rip_rate(2, 2, 4, 1.0, 1.0, 0.5) == pytest.approx(4 * 21.8629, abs=1e-3)
    assert sample_complexity_rip(2, 2, 4, 1.0, 1.0, 0.5) == 88


@settings(max_examples=60, deadline=None)
@given(k=st.integers(2, 10), d=st.integers(1, 5), extra=st.integers(0, 100), mu=st.floats(1, 50),
       delta=st.floats(0.01, 1), eps=st.floats(1e-6, 0.999))
def test_rates_match_oracle(k, d, extra, mu, delta, eps):
    kd = k + extra
    assert rip_rate(k, d, kd, mu, delta, eps) == pytest.approx(oracle_rate(k, d, kd, mu, delta, eps), rel=1e-12)
    assert recovery_rate(k, d, kd, mu, eps) == pytest.approx(rip_rate(k, d, kd, mu, 0.5, eps), rel=1e-14)
    assert sample_complexity_rip(k, d, kd, mu, delta, eps) >= rip_rate(k, d, kd, mu, delta, eps)


def test_scaling_laws():
    base = recovery_rate(3, 2, 12, 1.5, 0.1)
    assert recovery_rate(3, 2, 12, 3.0, 0.1) == pytest.approx(4 * base, rel=1e-14)
    assert recovery_rate(3, 2, 12, 1.5, 0.1 / math.e) - base == pytest.approx(16 * 1.5 ** 2, rel=1e-12)
    r = rip_rate(3, 2, 12, 1.5, 0.4, 0.1)
    assert rip_rate(3, 2, 12, 1.5, 0.2, 0.1) == pytest.approx(4 * r, rel=1e-14)


def test_monotonicity():
    ref = rip_rate(3, 2, 12, 2.0, 0.5, 0.1)
    assert rip_rate(3, 2, 12, 2.1, 0.5, 0.1) > ref
    assert rip_rate(4, 2, 12, 2.0, 0.5, 0.1) > ref
    assert rip_rate(3, 3, 12, 2.0, 0.5, 0.1) > ref
    assert rip_rate(3, 2, 13, 2.0, 0.5, 0.1) > ref
    assert rip_rate(3, 2, 12, 2.0, 0.5, 0.2) < ref
    assert rip_rate(3, 2, 12, 2.0, 0.6, 0.1) < ref


@pytest.mark.parametrize("kw", [dict(mu=0.9), dict(eps=0.0), dict(eps=1.0), dict(delta=0.0), dict(delta=1.5)])
def test_hypothesis_violations(kw):
    args = dict(k=2, d=2, k_d=4, mu=1.0, delta=0.5, eps=0.1) | kw
    with pytest.raises(HypothesisViolationError):
        rip_rate(**args)


def test_deviation_flat_case():
    # every index drawn exactly once and x with a flat spectrum: (1/m)||SDFx||^2 = ||x||^2
    M = 16
    p = SamplingDistribution.uniform(M)
    e = MeasurementEnsemble(np.arange(M), np.full(M, 4.0), p, DFT2((4, 4)))
    x = np.zeros(M)
    x[0] = 1.0
    assert rip_deviation(e, p, [x]) == pytest.approx(0.0, abs=1e-14)


def test_deviation_matches_definition():
    rng = np.random.default_rng(0)
    p = SamplingDistribution.from_weights(rng.random(64) * (rng.random(64) < 0.8))
    op = DFT2((8, 8))
    e = draw_ensemble(p, 37, 1, op)
    X = rng.standard_normal((5, 64))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    expected = max(abs(np.sum(np.abs(apply_sdf(e, x)) ** 2) / e.m
                       - np.sum(np.abs(support_projection(p, op.apply(x))[0]) ** 2)) for x in X)
    assert rip_deviation(e, p, X) == pytest.approx(expected, rel=1e-12)


def test_deviation_sign_and_scale_invariance():
    rng = np.random.default_rng(1)
    p = SamplingDistribution.uniform(64)
    e = draw_ensemble(p, 20, 2, DFT2((8, 8)))
    x = rng.standard_normal(64)
    u = x / np.linalg.norm(x)
    v = 3.7 * x
    assert rip_deviation(e, p, [-u]) == rip_deviation(e, p, [u])
    assert rip_deviation(e, p, [v / np.linalg.norm(v)]) == pytest.approx(rip_deviation(e, p, [u]), rel=1e-12)


def test_deviation_errors():
    p = SamplingDistribution.uniform(16)
    e = draw_ensemble(p, 4, 0, DFT2((4, 4)))
    with pytest.raises(ValueError):
        rip_deviation(e, p, [])
    with pytest.raises(ValueError):
        rip_deviation(e, p, [np.ones(16)])


def test_deviation_concentrates():
    rng = np.random.default_rng(3)
    p = SamplingDistribution.uniform(256)
    op = DFT2((16, 16))
    x = rng.standard_normal(256)
    x /= np.linalg.norm(x)
    devs = [rip_deviation(draw_ensemble(p, 4096, s, op), p, [x]) for s in range(20)]
    small = [rip_deviation(draw_ensemble(p, 64, s, op), p, [x]) for s in range(20)]
    assert np.mean(devs) <= 0.05
    assert np.mean(devs) < np.mean(small)


def _suite_setup():
    model = random_model((2, 4, 8), (16, 16), seed=0)
    prof = subspace_coherence(range_subspace_basis(model), DFT2((16, 16)))
    return model, optimal_distribution(prof)


def test_trial_suite_deterministic_and_m():
    model, p = _suite_setup()
    a = rip_trial_suite(model, p, 0.5, 0.1, trials=5, diffs_per_trial=20, seed=3)
    b = rip_trial_suite(model, p, 0.5, 0.1, trials=5, diffs_per_trial=20, seed=3)
    assert np.array_equal(a.deviations, b.deviations)
    mu = a.config["mu"]
    assert a.m == sample_complexity_rip(2, 2, 8, mu, 0.5, 0.1)
    assert 0 <= a.failure_fraction <= 1 and np.all(a.deviations >= 0)


def test_trial_suite_inflated_m_concentrates():
    model, p = _suite_setup()
    nominal = rip_trial_suite(model, p, 0.5, 0.1, trials=20, diffs_per_trial=50, seed=4)
    big = rip_trial_suite(model, p, 0.5, 0.1, trials=20, diffs_per_trial=50, seed=4, m_factor=10)
    assert big.m == 10 * nominal.m
    assert big.deviations.mean() < nominal.deviations.mean()


def test_write_report(tmp_path):
    model, p = _suite_setup()
    rep = rip_trial_suite(model, p, 0.5, 0.1, trials=3, diffs_per_trial=5, seed=0)
    write_rip_report(rep, tmp_path / "s.json", tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "trial,deviation,exceeds_delta" and len(lines) == 4
