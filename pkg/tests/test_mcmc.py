import numpy as np
import pytest
from scipy import stats as sps

from bayesoc.errors import ConvergenceWarning, CurvatureError, InitializationError, InvalidParameterError
from bayesoc.mcmc import (ChainConfig, TargetDensity, effective_sample_size, laplace_fit, sample,
                          split_rhat)
from bayesoc.stats import RngStream
from bayesoc.trial import DataModel, LogisticPosterior, design_matrix, simulate_dataset, DEFAULT_BETA

STD_NORMAL = TargetDensity(1, lambda x: -0.5 * float(x[0] ** 2))


@pytest.fixture(scope="module")
def normal_draws():
    return sample(STD_NORMAL, ChainConfig(n_chains=4, warmup=1000, keep=5000), RngStream(1))


def test_standard_normal_moments(normal_draws):
    x = normal_draws.draws[:, 0]
    assert abs(x.mean()) < 0.05
    assert abs(x.var() - 1.0) < 0.1
    assert normal_draws.converged


def test_detailed_balance_sanity(normal_draws):
    x = normal_draws.chains[0, :, 0]
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert lag1 < 0.99
    lo, hi = np.quantile(normal_draws.draws[:, 0], [0.025, 0.975])
    assert abs(lo + 1.96) < 0.1 and abs(hi - 1.96) < 0.1


def test_diagnostics_shapes(normal_draws):
    assert np.all(normal_draws.rhat >= 1.0)
    assert np.all(normal_draws.ess <= normal_draws.draws.shape[0])
    assert normal_draws.accept_rate.shape == (4,)
    assert np.all((normal_draws.accept_rate > 0.15) & (normal_draws.accept_rate < 0.6))


def test_shifted_normal_mean():
    target = TargetDensity(1, lambda x: -0.5 * float((x[0] - 3.0) ** 2) / 4.0)
    res = sample(target, ChainConfig(keep=3000), RngStream(2), init=np.array([3.0]), scale=2.0)
    assert abs(res.draws.mean() - 3.0) < 0.1


def test_uniform_target():
    def logd(x):
        return 0.0 if 0.0 <= x[0] <= 1.0 else -np.inf
    res = sample(TargetDensity(1, logd), ChainConfig(keep=5000), RngStream(3), init=np.array([0.5]),
                 scale=0.3)
    assert sps.kstest(res.draws[:, 0], "uniform").statistic < 0.05


def test_determinism():
    cfg = ChainConfig(warmup=200, keep=200)
    a = sample(STD_NORMAL, cfg, RngStream(9, 4))
    b = sample(STD_NORMAL, cfg, RngStream(9, 4))
    assert np.array_equal(a.chains, b.chains)


def test_frozen_adaptation():
    # during the kept phase every jump comes from the frozen proposal, so
    # accepted moves have a spread matching proposal_sd
    res = sample(STD_NORMAL, ChainConfig(warmup=500, keep=20000, n_chains=2), RngStream(5))
    for c in range(2):
        x = res.chains[c, :, 0]
        jumps = np.diff(x)
        jumps = jumps[jumps != 0]
        # accepted jumps are a truncated version of N(0, s^2): their spread cannot exceed s much
        assert jumps.std() < 1.2 * res.proposal_sd[c, 0]
        assert res.proposal_sd.shape == (2, 1)


def test_init_error():
    with pytest.raises(InitializationError):
        sample(TargetDensity(1, lambda x: -np.inf), ChainConfig(warmup=10, keep=10), RngStream(0))


def test_rhat_warning_on_bimodal_target():
    # two far-apart modes and chains started in different modes
    def logd(x):
        return float(np.logaddexp(-0.5 * (x[0] - 30) ** 2, -0.5 * (x[0] + 30) ** 2))

    with pytest.warns(ConvergenceWarning):
        res = sample(TargetDensity(1, logd), ChainConfig(warmup=200, keep=400, init_jitter=30.0),
                     RngStream(12), scale=1.0)
    assert not res.converged
    assert res.warnings


def test_chain_config_validation():
    with pytest.raises(InvalidParameterError):
        ChainConfig(n_chains=1)
    with pytest.raises(InvalidParameterError):
        ChainConfig(keep=0)
    with pytest.raises(InvalidParameterError):
        ChainConfig(target_accept=1.5)


def test_split_rhat_and_ess_on_iid():
    gen = np.random.default_rng(0)
    chains = gen.standard_normal((4, 1000, 2))
    r = split_rhat(chains)
    assert np.all(r >= 1.0) and np.all(r < 1.01)
    ess = effective_sample_size(chains)
    assert np.all(ess <= 4000) and np.all(ess > 2500)


def test_laplace_standard_normal():
    fit = laplace_fit(STD_NORMAL, [0.7])
    assert abs(fit.mode[0]) < 1e-6
    assert abs(fit.covariance[0, 0] - 1.0) < 1e-4


def test_laplace_diagonal_normal():
    mu, var = np.array([1.0, 2.0]), np.array([4.0, 9.0])
    fit = laplace_fit(TargetDensity(2, lambda x: -0.5 * float(np.sum((x - mu) ** 2 / var))), [0.0, 0.0])
    assert np.allclose(fit.mode, mu, atol=1e-6)
    assert np.allclose(fit.covariance, np.diag(var), atol=1e-3)
    assert np.allclose(fit.covariance, fit.covariance.T)


def test_laplace_curvature_error():
    with pytest.raises(CurvatureError):
        laplace_fit(TargetDensity(1, lambda x: float(x[0] ** 2) if abs(x[0]) < 1 else -np.inf), [0.0])


def _logistic_target(analysis, seed):
    model = DataModel("logistic-adjusted", DEFAULT_BETA, -0.5)
    data = simulate_dataset(model, 200, RngStream(seed))
    Z = design_matrix(data, analysis)
    post = LogisticPosterior(Z, data.Y, 10.0)
    target = TargetDensity(Z.shape[1], post.log_density)
    lap = laplace_fit(target, np.zeros(Z.shape[1]), post.grad, post.hess)
    assert np.linalg.norm(post.grad(lap.mode)) <= 1e-6
    long = sample(target, ChainConfig(n_chains=4, warmup=2000, keep=10000), RngStream(seed + 1),
                  init=lap.mode, scale=np.sqrt(np.diag(lap.covariance)))
    assert long.converged
    return target, lap, long.draws.mean(axis=0)


def test_laplace_logistic_vs_long_mcmc():
    target, lap, mean = _logistic_target("logistic-unadjusted", 77)
    assert np.max(np.abs(mean - lap.mode)) < 0.05
    # the finite-difference path finds the same mode
    fd = laplace_fit(target, np.zeros(2))
    assert np.allclose(fd.mode, lap.mode, atol=1e-4)


def test_laplace_adjusted_treatment_coefficient():
    # with seven coefficients at n = 200 the nuisance coefficients are visibly
    # skewed; the treatment effect that drives tau stays close
    _, lap, mean = _logistic_target("logistic-adjusted", 77)
    assert abs(mean[0] - lap.mode[0]) < 0.05
