import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from bayesoc.errors import EmptyInputError, InvalidParameterError
from bayesoc.stats import RngStream
from bayesoc.trial import (DEFAULT_COVARIATES, MARGINAL_DRAWS, DEFAULT_BETA, DataModel, EffectTransform, Scenario,
                           TauSample, decision_summary, draw_covariates, enumerate_sampling_distribution,
                           exact_tail_probability, exact_tau_conjugate, fit_posterior, g_compute,
                           marginal_effect, run_scenario, simulate_dataset, tau_conjugate)

ZERO_BETA = (0.0,) * 6


def _binom_se(p, m):
    return math.sqrt(max(p * (1 - p), 1e-12) / m)


# ---------------------------------------------------------------- data generation

def test_simulate_dataset_logit_zero():
    d = simulate_dataset(DataModel("logistic-adjusted", ZERO_BETA, 0.0), 100_000, RngStream(1))
    for arm in (0, 1):
        assert abs(d.Y[d.A == arm].mean() - 0.5) < 0.005
    assert np.array_equal(d.X[:, 3], d.X[:, 2] ** 2)


def test_simulate_dataset_saturation():
    d = simulate_dataset(DataModel("logistic-adjusted", ZERO_BETA, -1e6), 5000, RngStream(2))
    assert d.Y[d.A == 1].mean() == 0.0


def test_control_rate_matches_standardisation():
    d = simulate_dataset(DataModel("logistic-adjusted", DEFAULT_BETA, 0.0), 100_000, RngStream(3))
    # independent 1e6-draw marginalisation over the surrogate covariates
    X = draw_covariates(DEFAULT_COVARIATES, MARGINAL_DRAWS, np.random.default_rng(99))
    oracle = special.expit(DEFAULT_BETA[0] + X @ np.asarray(DEFAULT_BETA[1:])).mean()
    assert abs(d.Y[d.A == 0].mean() - oracle) < 0.005


def test_covariates_deterministic():
    a = draw_covariates(DEFAULT_COVARIATES, 10, RngStream(4).generator())
    b = draw_covariates(DEFAULT_COVARIATES, 10, RngStream(4).generator())
    assert np.array_equal(a, b)


def test_data_model_validation():
    with pytest.raises(InvalidParameterError):
        DataModel("logistic-adjusted", (0.0, 1.0), 0.0)
    with pytest.raises(InvalidParameterError):
        DataModel("probit", (0.0,), 0.0, ())
    with pytest.raises(InvalidParameterError):
        Scenario(DataModel.conjugate(0.3), 1)
    with pytest.raises(InvalidParameterError):
        Scenario(DataModel.conjugate(0.3), 20, M=99)


# ---------------------------------------------------------------- analysis fits

def test_posterior_consistent_at_large_n():
    d = simulate_dataset(DataModel("logistic-adjusted", DEFAULT_BETA, 0.0), 100_000, RngStream(5))
    fit = fit_posterior(d, "logistic-adjusted", stream=RngStream(6))
    assert abs(fit.draws[:, 0].mean()) < 0.05
    assert fit.draws.shape == (2000, 7)


def test_zero_events_does_not_crash():
    d = simulate_dataset(DataModel("logistic-unadjusted", (-50.0,), 0.0, ()), 10, RngStream(7))
    assert d.Y.sum() == 0
    fit = fit_posterior(d, "logistic-unadjusted", stream=RngStream(8))
    assert fit.separated
    assert np.all(np.isfinite(fit.draws))
    assert np.median(fit.draws[:, 1]) < 0


def test_laplace_and_mcmc_agree():
    d = simulate_dataset(DataModel("logistic-adjusted", DEFAULT_BETA, -0.5), 500, RngStream(9))
    lap = fit_posterior(d, "logistic-adjusted", method="laplace", stream=RngStream(10))
    mc = fit_posterior(d, "logistic-adjusted", method="mcmc", stream=RngStream(11))
    assert max(mc.meta["rhat"]) <= 1.05
    assert abs(lap.draws[:, 0].mean() - mc.draws[:, 0].mean()) < 0.05


def test_fit_requires_both_arms():
    d = simulate_dataset(DataModel.conjugate(0.3), 10, RngStream(0))
    d.A[:] = 1.0
    with pytest.raises(InvalidParameterError):
        fit_posterior(d, "beta-binomial")


# ---------------------------------------------------------------- G-computation and tau

def test_g_compute_null_effect():
    gen = np.random.default_rng(0)
    coefs = np.column_stack([np.zeros(50), gen.normal(size=(50, 6))])
    X = gen.normal(size=(30, 5))
    assert np.all(g_compute(coefs, X) == 0.0)


def test_g_compute_saturation_limit():
    psi = g_compute(np.array([[-np.inf, 0.0]]), np.zeros((1, 0)))
    assert psi[0] == pytest.approx(0.5)
    assert g_compute(np.array([[-1e6, 0.0]]), np.zeros((1, 0)))[0] == pytest.approx(0.5)


def test_g_compute_two_rows_by_hand():
    coefs = np.array([[-0.7, 0.2, 1.5]])
    X = np.array([[0.0], [1.0]])
    p0 = (special.expit(0.2) + special.expit(1.7)) / 2
    p1 = (special.expit(-0.5) + special.expit(1.0)) / 2
    assert g_compute(coefs, X)[0] == pytest.approx(p0 - p1, abs=1e-15)
    assert g_compute(coefs, X, "log-relative-risk")[0] == pytest.approx(math.log(p1 / p0), abs=1e-14)


def test_decision_summary_examples():
    assert decision_summary([0.1, 0.2, 0.3], 0.15, "greater") == pytest.approx(2 / 3)
    assert decision_summary([0.15] * 5, 0.15, "greater") == 0.0
    assert decision_summary([0.15] * 5, 0.15, "less") == 0.0
    z = np.random.default_rng(1).standard_normal(100_000)
    assert abs(decision_summary(z, 0.0) - 0.5) < 0.005
    with pytest.raises(EmptyInputError):
        decision_summary([], 0.0)
    with pytest.raises(InvalidParameterError):
        decision_summary([1.0], 0.0, "sideways")


# ---------------------------------------------------------------- conjugate oracle

def test_exact_tau_examples():
    assert exact_tau_conjugate(4, 10, 4, 10) == pytest.approx(0.5, abs=1e-10)
    assert exact_tau_conjugate(0, 1, 1, 1) == pytest.approx(5 / 6, abs=1e-10)


def test_exact_tau_against_monte_carlo():
    gen = RngStream(13).generator()
    m = 10_000_000
    p1 = gen.beta(4, 8, m)
    p0 = gen.beta(8, 4, m)
    assert abs(exact_tau_conjugate(3, 10, 7, 10) - np.mean(p0 > p1)) < 3e-4


@given(n1=st.integers(1, 60), n0=st.integers(1, 60), f1=st.floats(0, 1), f0=st.floats(0, 1))
def test_closed_form_tau_matches_quadrature(n1, n0, f1, f0):
    y1, y0 = int(round(f1 * n1)), int(round(f0 * n0))
    assert abs(tau_conjugate(y1, n1, y0, n0) - exact_tau_conjugate(y1, n1, y0, n0)) < 1e-8


def test_enumeration_one_per_arm():
    dist = enumerate_sampling_distribution(1, 0.5, 0.5)
    assert np.allclose(dist.probs, 0.25)
    expected = np.array([[0.5, 5 / 6], [1 / 6, 0.5]])   # [y1, y0]
    assert np.allclose(dist.taus, expected, atol=1e-12)


def test_enumeration_tail_vanishes():
    dist = enumerate_sampling_distribution(30, 0.3, 0.3)
    tails = [dist.tail(1 - 10.0**-k) for k in (2, 4, 8, 15)]
    assert all(b <= a for a, b in zip(tails, tails[1:]))
    assert tails[-1] < 1e-15
    assert dist.probs.sum() == pytest.approx(1.0)


def test_exact_tail_matches_enumeration():
    for n, p1, p0 in [(40, 0.3, 0.3), (25, 0.2, 0.4), (60, 0.45, 0.5)]:
        dist = enumerate_sampling_distribution(n, p1, p0)
        for u in (0.9, 0.975, 0.99):
            assert abs(exact_tail_probability(n, n, p1, p0, u) - dist.tail(u)) < 1e-12


def test_type1_target_n40():
    # reference for the held-out null comparisons
    t = enumerate_sampling_distribution(40, 0.3, 0.3).tail(0.975)
    assert 0.015 < t < 0.03


def test_enumeration_limit():
    with pytest.raises(InvalidParameterError):
        enumerate_sampling_distribution(201, 0.3, 0.3)


# ---------------------------------------------------------------- scenario runner

def test_run_scenario_null_mean():
    s = run_scenario(Scenario(DataModel.conjugate(0.3), 40, M=5000), stream=RngStream(20))
    assert abs(s.taus.mean() - 0.5) < 0.02
    assert s.meta["method"] == "exact"


def test_run_scenario_saturation():
    s = run_scenario(Scenario(DataModel.conjugate(0.5, -3.0), 1000, M=1000), stream=RngStream(21))
    assert np.mean(s.taus > 0.975) >= 0.99


def test_logistic_null_nominal_level():
    # large-n logistic null row: tail rate near 1 - u
    sc = Scenario(DataModel("logistic-adjusted", DEFAULT_BETA, 0.0), 1000, M=2000)
    s = run_scenario(sc, stream=RngStream(22))
    assert abs(np.mean(s.taus > 0.975) - 0.025) < 0.01
    assert s.meta["failures"] == 0


@pytest.mark.parametrize("n,p0,eta", [(40, 0.3, 0.0), (60, 0.5, -0.6), (100, 0.3, -0.4)])
def test_pipeline_matches_enumeration(n, p0, eta):
    model = DataModel.conjugate(p0, eta)
    s = run_scenario(Scenario(model, 2 * n, M=20_000), stream=RngStream(23))
    n1, n0 = model.arm_sizes(2 * n)
    p1 = special.expit(special.logit(p0) + eta)
    for u in (0.9, 0.975):
        exact = exact_tail_probability(n1, n0, p1, p0, u)
        assert abs(np.mean(s.taus > u) - exact) <= 3 * _binom_se(exact, 20_000)


def test_null_symmetry():
    for p0 in (0.2, 0.5):
        s = run_scenario(Scenario(DataModel.conjugate(p0), 200, M=10_000), stream=RngStream(24))
        assert abs(s.taus.mean() - 0.5) <= 3 * s.taus.std() / math.sqrt(s.taus.size)


def test_adjusted_unadjusted_agree_without_covariate_effects():
    beta = (-0.5, 0.0, 0.0, 0.0, 0.0, 0.0)
    rates = []
    for kind in ("logistic-adjusted", "logistic-unadjusted"):
        sc = Scenario(DataModel(kind, beta, -0.5), 200, M=600)
        rates.append(np.mean(run_scenario(sc, stream=RngStream(25)).taus > 0.9))
    se = math.sqrt(2 * rates[0] * (1 - rates[0]) / 600)
    assert abs(rates[0] - rates[1]) <= 2 * se


def test_monotone_saturation():
    rates = []
    for rd in (0.0, 0.05, 0.1, 0.2):
        s = run_scenario(Scenario(DataModel.conjugate_rd(0.4, rd), 200, M=4000), stream=RngStream(26))
        rates.append(np.mean(s.taus > 0.975))
    assert all(b >= a - 3 * _binom_se(a, 4000) for a, b in zip(rates, rates[1:]))
    assert rates[-1] > rates[0]


def test_run_scenario_reproducible_across_threads():
    sc = Scenario(DataModel.conjugate(0.3, -0.3), 60, M=1000)
    a = run_scenario(sc, stream=RngStream(27), threads=1)
    b = run_scenario(sc, stream=RngStream(27), threads=2)
    assert np.array_equal(a.taus, b.taus)


def test_tau_sample_validation():
    sc = Scenario(DataModel.conjugate(0.3), 20, M=100)
    with pytest.raises(InvalidParameterError):
        TauSample(sc, np.array([0.5, 1.5]))


def test_scenario_round_trip():
    sc = Scenario(DataModel("logistic-adjusted", DEFAULT_BETA, -1.03), 100, M=1000)
    assert Scenario.from_dict(sc.to_dict()) == sc


# ---------------------------------------------------------------- marginal effects

def test_marginal_effect_conjugate_exact():
    m = DataModel.conjugate_rd(0.3, 0.1)
    assert marginal_effect(m) == pytest.approx(0.1, abs=1e-14)
    assert marginal_effect(m, "log-relative-risk") == pytest.approx(math.log(0.2 / 0.3), abs=1e-14)


def test_effect_transform_matches_direct():
    model = DataModel("logistic-adjusted", DEFAULT_BETA, 0.0)
    tr = EffectTransform(model)
    for eta in (-1.03, -0.5, 0.0):
        direct = marginal_effect(DataModel("logistic-adjusted", DEFAULT_BETA, eta))
        assert abs(float(tr(eta)) - direct) < 1e-4
    assert float(tr(0.0)) == pytest.approx(0.0, abs=1e-12)
