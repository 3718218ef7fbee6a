"""Beta-mixture models for the sampling distribution of tau.

Under the null, tau ~ beta(a0, a0) with
``log a0 ~ Normal(alpha1/n + alpha2/n**2, sigma0**2)``; under the alternative,
tau ~ beta(aA, 1/aA) with ``log aA ~ Normal(phi1*delta + phi2*delta**2, sigma1**2)``
where ``delta = sqrt(n) * (psi* - psi0)`` on the estimand scale.

Fitting is two-stage. Stage 1 turns each scenario's empirical upper
quantiles into posterior draws of ``log a`` via a tempered squared-loss
(Gibbs) posterior. Stage 2 treats a thinned set of those draws as data for
the hierarchical log-normal regressions above.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, special

from .errors import DuplicateScenarioError, InsufficientDesignError, InvalidParameterError
from .mcmc import ChainConfig, TargetDensity, effective_sample_size, laplace_fit, sample, split_rhat
from .stats import BetaParams, RngStream, beta_quantile, empirical_quantiles
from .trial import TauSample, direction_sign, marginal_effect

log = logging.getLogger(__name__)

DEFAULT_PROBS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 0.99)
DEFAULT_SIGMA_EPS = 1e-4
LOG_SHAPE_PRIOR_SD = 10.0
COEF_PRIOR_SD = 100.0
SIGMA_PRIOR_SD = 1.0
THIN_PER_SCENARIO = 50
BOOTSTRAP_REPS = 100
BOOTSTRAP_SEED = 20240301
LOG_SHAPE_LIMIT = 60.0
# keeps the stage-2 likelihood proper when all stage-1 draws coincide
_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class QuantileGrid:
    probs: tuple = DEFAULT_PROBS

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any((p <= 0) | (p >= 1)) or np.any(np.diff(p) <= 0):
            raise InvalidParameterError("quantile grid must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.probs)


@dataclass(frozen=True)
class QuantileRow:
    key: str
    n: int
    delta: float
    q: np.ndarray
    # bootstrap Monte Carlo variance of each quantile (used by sigma_eps="auto")
    q_var: Optional[np.ndarray] = None

    def auto_sigma_eps(self) -> float:
        """Loss scale matching the quantiles' Monte Carlo noise: 2 * mean variance."""
        if self.q_var is None:
            raise InvalidParameterError(f"row {self.key} carries no quantile variances")
        return max(2.0 * float(np.mean(self.q_var)), 1e-14)

    @property
    def hypothesis(self) -> str:
        return "null" if self.delta == 0 else "alt"


@dataclass(frozen=True)
class QuantileMatrix:
    rows: tuple
    grid: QuantileGrid

    @property
    def D(self) -> int:
        return len(self.rows)

    @property
    def J(self) -> int:
        return len(self.grid.probs)

    @property
    def Q(self) -> np.ndarray:
        return np.vstack([r.q for r in self.rows]) if self.rows else np.empty((0, self.J))

    def select(self, hypothesis: str) -> "QuantileMatrix":
        return QuantileMatrix(tuple(r for r in self.rows if r.hypothesis == hypothesis), self.grid)


def scenario_delta(sample: TauSample, psi0: Optional[float] = None) -> float:
    s = sample.scenario
    psi0 = s.psi0 if psi0 is None else psi0
    if s.model.eta == 0:
        return 0.0
    psi = marginal_effect(s.model, s.estimand)
    return float(math.sqrt(s.n) * direction_sign(s.direction) * (psi - psi0))


def bootstrap_quantile_var(taus: np.ndarray, probs, reps: int = BOOTSTRAP_REPS,
                           seed: int = BOOTSTRAP_SEED) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(seed))
    taus = np.sort(np.asarray(taus, dtype=float))
    boot = np.empty((reps, len(probs)))
    for r in range(reps):
        boot[r] = np.quantile(taus[gen.integers(0, taus.size, taus.size)], probs, method="linear")
    return boot.var(axis=0, ddof=1)


def build_quantile_matrix(samples: Sequence[TauSample], grid: QuantileGrid = QuantileGrid(),
                          psi0: Optional[float] = None) -> QuantileMatrix:
    rows, seen = [], set()
    for smp in samples:
        if smp.taus.size < 1000:
            raise InvalidParameterError(f"scenario {smp.scenario.key} has fewer than 1000 draws")
        key = smp.scenario.key
        if key in seen:
            raise DuplicateScenarioError(f"duplicate scenario {key}")
        seen.add(key)
        q = empirical_quantiles(smp.taus, grid.probs)
        var = bootstrap_quantile_var(smp.taus, grid.probs)
        rows.append(QuantileRow(key, smp.scenario.n, scenario_delta(smp, psi0), q, var))
    return QuantileMatrix(tuple(rows), grid)


# ---------------------------------------------------------------- stage 1

def _shapes(theta, hypothesis: str, asymmetric: bool):
    la = theta[0]
    if asymmetric:
        return la, theta[1]
    return la, (la if hypothesis == "null" else -la)


def quantile_loss_target(q_emp, probs, hypothesis: str, sigma_eps: float = DEFAULT_SIGMA_EPS,
                         asymmetric: bool = False) -> TargetDensity:
    """Gibbs posterior over log shape(s) with loss sum((q_emp - q_beta)^2) / sigma_eps."""
    if sigma_eps <= 0:
        raise InvalidParameterError("sigma_eps must be positive")
    if hypothesis not in ("null", "alt"):
        raise InvalidParameterError("hypothesis must be 'null' or 'alt'")
    q_emp = np.asarray(q_emp, dtype=float)
    probs = np.asarray(probs, dtype=float)
    asym = asymmetric and hypothesis == "null"
    dim = 2 if asym else 1
    prior_prec = 1.0 / LOG_SHAPE_PRIOR_SD**2

    def log_density(theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(np.abs(theta) > LOG_SHAPE_LIMIT):
            return -np.inf
        la, lb = _shapes(theta, hypothesis, asym)
        q_th = beta_quantile(probs, math.exp(la), math.exp(lb))
        loss = float(np.sum((q_emp - q_th) ** 2))
        return -loss / sigma_eps - 0.5 * prior_prec * float(theta @ theta)

    return TargetDensity(dim, log_density)


@dataclass(frozen=True)
class Stage1Entry:
    key: str
    n: int
    delta: float
    hypothesis: str
    draws: np.ndarray          # (S1, dim) log shape draws
    rhat: np.ndarray
    ess: np.ndarray
    converged: bool

    @property
    def log_a(self) -> np.ndarray:
        return self.draws[:, 0]

    def thinned(self, count: int = THIN_PER_SCENARIO) -> np.ndarray:
        idx = np.linspace(0, self.draws.shape[0] - 1, count).round().astype(int)
        return self.draws[idx]


@dataclass(frozen=True)
class Stage1Posterior:
    entries: tuple
    sigma_eps: float
    asymmetric: bool = False

    @property
    def flagged(self) -> list:
        return [e.key for e in self.entries if not e.converged]

    def select(self, hypothesis: str) -> "Stage1Posterior":
        return Stage1Posterior(tuple(e for e in self.entries if e.hypothesis == hypothesis),
                               self.sigma_eps, self.asymmetric)


STAGE1_CONFIG = ChainConfig(n_chains=4, warmup=1000, keep=1000, init_jitter=1.0)


def _stage1_start(target: TargetDensity, hypothesis: str):
    grid = np.linspace(-15.0, 40.0, 221) if hypothesis == "alt" else np.linspace(-15.0, 25.0, 161)
    if target.dim == 2:
        vals = [target.log_density(np.array([g, g])) for g in grid]
        best = grid[int(np.argmax(vals))]
        res = optimize.minimize(lambda th: -target.log_density(th), np.array([best, best]),
                                method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-10})
        mode = res.x
    else:
        vals = [target.log_density(np.array([g])) for g in grid]
        i = int(np.argmax(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = optimize.minimize_scalar(lambda x: -target.log_density(np.array([x])),
                                       bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
        mode = np.array([res.x])
    scale = np.empty(target.dim)
    f0 = target.log_density(mode)
    for j in range(target.dim):
        h = 1e-3
        e = np.zeros(target.dim)
        e[j] = h
        curv = -(target.log_density(mode + e) - 2 * f0 + target.log_density(mode - e)) / h**2
        scale[j] = 1.0 / math.sqrt(curv) if np.isfinite(curv) and curv > 0 else 0.1
    return mode, scale


def stage1_fit(row: QuantileRow, hypothesis: Optional[str] = None,
               sigma_eps: Union[float, str] = DEFAULT_SIGMA_EPS,
               stream: Optional[RngStream] = None, grid: Union[QuantileGrid, Sequence[float]] = QuantileGrid(),
               cfg: ChainConfig = STAGE1_CONFIG, asymmetric: bool = False) -> Stage1Entry:
    """Sample log a (and log b if ``asymmetric`` null) for one scenario row.

    ``sigma_eps="auto"`` sets the loss scale from the row's quantile variances.
    """
    hypothesis = hypothesis or row.hypothesis
    if sigma_eps == "auto":
        sigma_eps = row.auto_sigma_eps()
    probs = grid.probs if isinstance(grid, QuantileGrid) else tuple(grid)
    target = quantile_loss_target(row.q, probs, hypothesis, sigma_eps, asymmetric)
    mode, scale = _stage1_start(target, hypothesis)
    res = sample(target, cfg, stream or RngStream(0), init=mode, scale=scale)
    return Stage1Entry(row.key, row.n, row.delta, hypothesis, res.draws, res.rhat, res.ess, res.converged)


def _stage1_job(args):
    return stage1_fit(*args)


def stage1_fit_all(qm: QuantileMatrix, sigma_eps: Union[float, str] = DEFAULT_SIGMA_EPS,
                   stream: Optional[RngStream] = None, cfg: ChainConfig = STAGE1_CONFIG,
                   asymmetric: bool = False, threads: int = 1) -> Stage1Posterior:
    """Stage-1 fits for every row; row ``d`` uses ``stream.substream(d)``."""
    stream = stream or RngStream(0)
    jobs = [(row, row.hypothesis, sigma_eps, stream.substream(d), qm.grid, cfg, asymmetric)
            for d, row in enumerate(qm.rows)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(_stage1_job, jobs))
    else:
        entries = [_stage1_job(j) for j in jobs]
    for e in entries:
        if not e.converged:
            log.warning("stage-1 fit for %s did not converge (R-hat %s)", e.key, np.round(e.rhat, 3))
    return Stage1Posterior(tuple(entries), sigma_eps, asymmetric)


# ---------------------------------------------------------------- stage 2

@dataclass(frozen=True)
class RegressionDraws:
    """Posterior draws of ``log shape ~ Normal(c1*f1(x) + c2*f2(x), sigma^2)``."""

    c1: np.ndarray
    c2: np.ndarray
    sigma: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray

    @property
    def converged(self) -> bool:
        return bool(np.all(self.rhat <= 1.05))


STAGE2_CONFIG = ChainConfig(n_chains=4, warmup=1000, keep=1000, init_jitter=1.0)


def _fit_regression(y: np.ndarray, F: np.ndarray, stream: RngStream, cfg: ChainConfig,
                    nonneg: tuple = ()) -> RegressionDraws:
    """Random-walk Metropolis on (c1, c2, log sigma) after whitening with a Laplace fit."""
    coef_prec = 1.0 / COEF_PRIOR_SD**2
    lower = np.full(2, -np.inf)
    for j in nonneg:
        lower[j] = 0.0

    def log_post_free(theta):
        c, log_s = theta[:2], theta[2]
        if not -50.0 < log_s < 10.0:
            return -np.inf
        s2 = math.exp(2 * log_s) + _SIGMA_FLOOR**2
        r = y - F @ c
        ll = -0.5 * y.size * math.log(s2) - 0.5 * float(r @ r) / s2
        lp = -0.5 * coef_prec * float(c @ c) - 0.5 * math.exp(2 * log_s) / SIGMA_PRIOR_SD**2
        return ll + lp + log_s

    def log_post(theta):
        return -np.inf if np.any(theta[:2] < lower) else log_post_free(theta)

    c0 = np.linalg.lstsq(F, y, rcond=None)[0]
    resid_sd = float(np.std(y - F @ c0))
    start = np.array([c0[0], c0[1], math.log(max(resid_sd, 1e-4))])
    # whiten with the unconstrained Laplace fit, then move the centre inside the constraints
    try:
        lap = laplace_fit(TargetDensity(3, log_post_free), start)
        L = np.linalg.cholesky(lap.covariance)
        center = lap.mode.copy()
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(center))):
            raise ValueError("non-finite Laplace fit")
    except Exception:  # noqa: BLE001 - fall back to a diagonal preconditioner
        center = start.copy()
        L = np.diag(np.maximum(np.abs(start) * 0.1, 1e-3))
    bound = np.flatnonzero(center[:2] < lower)
    if bound.size:
        # the constraint binds: hold those coefficients just inside it and
        # re-fit the Laplace approximation over the remaining parameters
        sd = np.sqrt(np.sum(L**2, axis=1))
        center[bound] = lower[bound] + 0.5 * sd[bound]
        free = np.setdiff1d(np.arange(3), bound)

        def reduced(t):
            full = center.copy()
            full[free] = t
            return log_post_free(full)
        try:
            sub = laplace_fit(TargetDensity(free.size, reduced), center[free])
            center[free] = sub.mode
            L = np.zeros((3, 3))
            L[np.ix_(free, free)] = np.linalg.cholesky(sub.covariance)
            L[bound, bound] = sd[bound]
        except Exception:  # noqa: BLE001 - keep the unconstrained whitening
            pass
    white = TargetDensity(3, lambda z: log_post(center + L @ z))
    res = sample(white, cfg, stream, init=np.zeros(3), scale=np.ones(3))
    chains = center + res.chains @ L.T
    draws = chains.reshape(-1, 3)
    return RegressionDraws(draws[:, 0], draws[:, 1], np.exp(draws[:, 2]),
                           split_rhat(chains), effective_sample_size(chains))


def _stage2_data(stage1: Stage1Posterior, column: int, index: str, per_row: int):
    ys, xs = [], []
    for e in stage1.entries:
        d = e.thinned(per_row)[:, column]
        ys.append(d)
        xs.append(np.full(d.size, e.n if index == "n" else e.delta, dtype=float))
    return np.concatenate(ys), np.concatenate(xs)


@dataclass(frozen=True)
class NullShapePosterior:
    alpha1: np.ndarray
    alpha2: np.ndarray
    sigma0: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    n_values: tuple = ()
    # independent log b regression when the symmetric null is relaxed
    second: Optional[RegressionDraws] = None

    @property
    def size(self) -> int:
        return self.alpha1.size

    @property
    def converged(self) -> bool:
        ok = bool(np.all(self.rhat <= 1.05))
        return ok and (self.second is None or self.second.converged)

    def mean_log_a(self, n: float) -> np.ndarray:
        return self.alpha1 / n + self.alpha2 / n**2

    @classmethod
    def point_mass(cls, alpha1: float = 0.0, alpha2: float = 0.0, sigma0: float = 0.0, size: int = 1):
        full = lambda v: np.full(size, float(v))  # noqa: E731
        return cls(full(alpha1), full(alpha2), full(sigma0), np.ones(3), np.full(3, size))


@dataclass(frozen=True)
class AltShapePosterior:
    phi1: np.ndarray
    phi2: np.ndarray
    sigma1: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    delta_values: tuple = ()
    psi0: float = 0.0
    direction: str = "greater"

    @property
    def size(self) -> int:
        return self.phi1.size

    @property
    def converged(self) -> bool:
        return bool(np.all(self.rhat <= 1.05))

    def mean_log_a(self, delta) -> np.ndarray:
        """Mean of log a at ``delta``; extended as an odd function for delta < 0.

        A negative delta mirrors the positive case (beta(1/a, a) is
        beta(a, 1/a) reflected about 1/2), giving small tail probabilities
        on the null side.
        """
        delta = np.asarray(delta, dtype=float)
        mag = np.abs(delta)
        sign = np.sign(delta)
        if delta.ndim == 0:
            return sign * (self.phi1 * mag + self.phi2 * mag**2)
        return sign[..., None] * (self.phi1 * mag[..., None] + self.phi2 * mag[..., None] ** 2)

    @classmethod
    def point_mass(cls, phi1: float = 1.0, phi2: float = 0.0, sigma1: float = 0.0, size: int = 1):
        full = lambda v: np.full(size, float(v))  # noqa: E731
        return cls(full(phi1), full(phi2), full(sigma1), np.ones(3), np.full(3, size))


def stage2_fit_null(stage1: Stage1Posterior, stream: Optional[RngStream] = None,
                    cfg: ChainConfig = STAGE2_CONFIG, per_row: int = THIN_PER_SCENARIO) -> NullShapePosterior:
    """Fit ``log a0(n) ~ Normal(alpha1/n + alpha2/n^2, sigma0^2)`` to thinned stage-1 draws."""
    stage1 = stage1.select("null")
    n_values = sorted({e.n for e in stage1.entries})
    if len(n_values) < 3:
        raise InsufficientDesignError(f"null fit needs at least 3 distinct n values, got {len(n_values)}")
    stream = stream or RngStream(0)
    y, n = _stage2_data(stage1, 0, "n", per_row)
    F = np.column_stack([1.0 / n, 1.0 / n**2])
    fit = _fit_regression(y, F, stream.substream(0), cfg)
    second = None
    if stage1.asymmetric:
        yb, _ = _stage2_data(stage1, 1, "n", per_row)
        second = _fit_regression(yb, F, stream.substream(1), cfg)
    return NullShapePosterior(fit.c1, fit.c2, fit.sigma, fit.rhat, fit.ess, tuple(n_values), second)


def stage2_fit_alt(stage1: Stage1Posterior, stream: Optional[RngStream] = None,
                   cfg: ChainConfig = STAGE2_CONFIG, per_row: int = THIN_PER_SCENARIO,
                   nonneg_quadratic: bool = False, psi0: float = 0.0,
                   direction: str = "greater") -> AltShapePosterior:
    """Fit ``log aA(delta) ~ Normal(phi1*delta + phi2*delta^2, sigma1^2)``.

    ``nonneg_quadratic`` restricts phi2 >= 0 (guarantees the point-mass
    limit at large delta whenever phi1 >= 0).
    """
    stage1 = stage1.select("alt")
    deltas = sorted({round(e.delta, 12) for e in stage1.entries})
    if len(deltas) < 3:
        raise InsufficientDesignError(f"alternative fit needs at least 3 distinct delta values, got {len(deltas)}")
    stream = stream or RngStream(0)
    y, d = _stage2_data(stage1, 0, "delta", per_row)
    F = np.column_stack([d, d**2])
    fit = _fit_regression(y, F, stream.substream(0), cfg, nonneg=(1,) if nonneg_quadratic else ())
    return AltShapePosterior(fit.c1, fit.c2, fit.sigma, fit.rhat, fit.ess, tuple(deltas), psi0, direction)


# ---------------------------------------------------------------- predictive shapes

@dataclass(frozen=True)
class ShapeDraws:
    """K predictive beta shapes, stored on the log scale."""

    log_a: np.ndarray
    log_b: np.ndarray

    def __len__(self):
        return self.log_a.size

    def __iter__(self):
        for la, lb in zip(self.log_a, self.log_b):
            yield BetaParams(math.exp(min(la, 700.0)), math.exp(min(lb, 700.0)))

    @property
    def a(self) -> np.ndarray:
        return np.exp(np.clip(self.log_a, -700.0, 700.0))

    @property
    def b(self) -> np.ndarray:
        return np.exp(np.clip(self.log_b, -700.0, 700.0))

    def means(self) -> np.ndarray:
        # a / (a + b) without overflow; exactly 1/2 when a == b
        return np.where(self.log_a == self.log_b, 0.5, special.expit(self.log_a - self.log_b))

    def variances(self) -> np.ndarray:
        m = self.means()
        log_total = np.logaddexp(np.logaddexp(self.log_a, self.log_b), 0.0)
        return m * special.expit(self.log_b - self.log_a) * np.exp(-log_total)

    def mixture_moments(self) -> tuple[float, float]:
        """Mean and variance of tau under the equally weighted beta mixture."""
        m = self.means()
        mean = float(np.mean(m))
        var = float(np.mean(self.variances()) + np.mean((m - mean) ** 2))
        return mean, var


def hyper_indices(size: int, K: int) -> np.ndarray:
    """Deterministic thinning (or cycling) of ``size`` posterior draws to ``K``."""
    if K <= size:
        return np.linspace(0, size - 1, K).round().astype(int)
    return np.arange(K) % size


def resolve_delta(model: AltShapePosterior, n: Optional[float] = None, psi: Optional[float] = None,
                  delta: Optional[float] = None) -> float:
    if delta is not None:
        return float(delta)
    if n is None or psi is None:
        raise InvalidParameterError("give either delta or both n and psi")
    return float(math.sqrt(n) * direction_sign(model.direction) * (psi - model.psi0))


def predictive_shape(model: Union[NullShapePosterior, AltShapePosterior], n: Optional[float] = None,
                     psi: Optional[float] = None, delta: Optional[float] = None, K: int = 4000,
                     stream: Optional[RngStream] = None) -> ShapeDraws:
    """One predictive shape per hyperparameter draw (K draws in total)."""
    gen = (stream or RngStream(0)).generator()
    idx = hyper_indices(model.size, K)
    z = gen.standard_normal(K)
    if isinstance(model, NullShapePosterior):
        if n is None:
            raise InvalidParameterError("null predictive needs n")
        la = model.mean_log_a(n)[idx] + model.sigma0[idx] * z
        if model.second is not None:
            s = model.second
            lb = (s.c1 / n + s.c2 / n**2)[idx % s.c1.size] + s.sigma[idx % s.c1.size] * gen.standard_normal(K)
        else:
            lb = la
        return ShapeDraws(la, lb)
    d = resolve_delta(model, n, psi, delta)
    la = model.mean_log_a(d)[idx] + model.sigma1[idx] * z
    return ShapeDraws(la, -la)
