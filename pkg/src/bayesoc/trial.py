"""Trial simulation, Bayesian analysis fits and the decision summary tau.

Data are generated from ``logit(p) = eta*A + [1, X] @ beta``. Three analysis
kinds are supported:

* ``logistic-adjusted``   - logistic regression on treatment and all covariates;
  the marginal estimand comes from Bayesian G-computation over observed X.
* ``logistic-unadjusted`` - intercept + treatment only.
* ``beta-binomial``       - two arms with independent Beta(1, 1) priors. Here
  tau has a closed form, so this kind doubles as an exact oracle for the
  whole pipeline (see :func:`enumerate_sampling_distribution`).

The decision summary is tau = P(psi > psi0 | y) after the effect direction
is normalised, with psi = p0 - p1 (risk difference) or log(p1 / p0)
(log relative risk), p1 being the intervention-arm risk.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import EmptyInputError, InvalidParameterError, SimulationError
from .mcmc import ChainConfig, TargetDensity, laplace_fit, sample
from .stats import RngStream

log = logging.getLogger(__name__)

KINDS = ("logistic-adjusted", "logistic-unadjusted", "beta-binomial")
ESTIMANDS = ("risk-difference", "log-relative-risk")
BLOCK_SIZE = 250
MARGINAL_DRAWS = 1_000_000
MARGINAL_SEED = 20240229
DEFAULT_BETA = (-1.26, 1.0, -0.5, 1.0, -0.1, 0.5)


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str                     # bernoulli | normal | square
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("bernoulli", "normal", "square"):
            raise InvalidParameterError(f"unknown covariate generator {self.kind!r}")


DEFAULT_COVARIATES = (
    Covariate("x1", "bernoulli", (0.5,)),
    Covariate("x2", "bernoulli", (0.3,)),
    Covariate("x3", "normal", (0.0, 1.0)),
    Covariate("x4", "square", ("x3",)),
    Covariate("x5", "normal", (0.0, 1.0)),
)


def draw_covariates(covs: Sequence[Covariate], n: int, gen: np.random.Generator) -> np.ndarray:
    cols = {}
    out = np.empty((n, len(covs)))
    for j, cov in enumerate(covs):
        if cov.kind == "bernoulli":
            col = (gen.random(n) < cov.params[0]).astype(float)
        elif cov.kind == "normal":
            col = gen.normal(cov.params[0], cov.params[1], n)
        else:
            col = cols[cov.params[0]] ** 2
        cols[cov.name] = col
        out[:, j] = col
    return out


@dataclass(frozen=True)
class DataModel:
    kind: str
    beta: tuple
    eta: float
    covariates: tuple = DEFAULT_COVARIATES
    alloc_ratio: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.kind == "beta-binomial" and self.covariates:
            object.__setattr__(self, "covariates", ())
        if len(self.beta) != len(self.covariates) + 1:
            raise InvalidParameterError("beta must have one entry per covariate plus an intercept")
        if not 0 < self.alloc_ratio < 1:
            raise InvalidParameterError("alloc_ratio must be in (0, 1)")

    @classmethod
    def conjugate(cls, control_rate: float, eta: float = 0.0) -> "DataModel":
        return cls("beta-binomial", (special.logit(control_rate),), eta, ())

    @classmethod
    def conjugate_rd(cls, control_rate: float, risk_difference: float) -> "DataModel":
        """Conjugate model whose intervention risk is ``control_rate - risk_difference``."""
        p1 = control_rate - risk_difference
        if not 0 < p1 < 1:
            raise InvalidParameterError("risk difference leaves the (0, 1) range")
        return cls.conjugate(control_rate, float(special.logit(p1) - special.logit(control_rate)))

    def arm_sizes(self, n: int) -> tuple[int, int]:
        """(intervention, control) sizes for the fixed-allocation conjugate design."""
        n1 = int(round(n * self.alloc_ratio))
        return n1, n - n1


@dataclass(frozen=True)
class Scenario:
    model: DataModel
    n: int
    psi0: float = 0.0
    estimand: str = "risk-difference"
    M: int = 10_000

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParameterError("n must be at least 2")
        if self.M < 100:
            raise InvalidParameterError("M must be at least 100")
        if self.estimand not in ESTIMANDS:
            raise InvalidParameterError(f"unknown estimand {self.estimand!r}")
        if self.model.kind == "beta-binomial" and self.psi0 != 0:
            raise InvalidParameterError("the conjugate design supports only psi0 = 0")

    @property
    def direction(self) -> str:
        return direction_for(self.estimand)

    @property
    def key(self) -> str:
        m = self.model
        return f"{m.kind}|eta={m.eta:.10g}|beta={','.join(f'{b:.10g}' for b in m.beta)}|n={self.n}"

    def to_dict(self) -> dict:
        m = self.model
        return {
            "kind": m.kind, "beta": list(m.beta), "eta": m.eta,
            "covariates": [[c.name, c.kind, list(c.params)] for c in m.covariates],
            "alloc_ratio": m.alloc_ratio, "n": self.n, "psi0": self.psi0,
            "estimand": self.estimand, "M": self.M,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        covs = tuple(Covariate(c[0], c[1], tuple(c[2])) for c in d["covariates"])
        model = DataModel(d["kind"], tuple(d["beta"]), d["eta"], covs, d["alloc_ratio"])
        return cls(model, int(d["n"]), d["psi0"], d["estimand"], int(d["M"]))


def direction_for(estimand: str) -> str:
    # benefit means fewer events: p0 - p1 > 0, log(p1/p0) < 0
    return "greater" if estimand == "risk-difference" else "less"


def direction_sign(direction: str) -> float:
    if direction not in ("greater", "less"):
        raise InvalidParameterError(f"direction must be 'greater' or 'less', got {direction!r}")
    return 1.0 if direction == "greater" else -1.0


@dataclass
class Dataset:
    A: np.ndarray
    X: np.ndarray
    Y: np.ndarray


def _as_generator(stream) -> np.random.Generator:
    return stream if isinstance(stream, np.random.Generator) else stream.generator()


def simulate_dataset(model: DataModel, n: int,
                     stream: Union[RngStream, np.random.Generator]) -> Dataset:
    gen = _as_generator(stream)
    if model.kind == "beta-binomial":
        n1, n0 = model.arm_sizes(n)
        A = np.concatenate([np.ones(n1), np.zeros(n0)])
        X = np.empty((n, 0))
    else:
        A = (gen.random(n) < model.alloc_ratio).astype(float)
        X = draw_covariates(model.covariates, n, gen)
    lin = model.eta * A + model.beta[0] + X @ np.asarray(model.beta[1:])
    Y = (gen.random(n) < special.expit(lin)).astype(float)
    return Dataset(A, X, Y)


# ---------------------------------------------------------------- analysis fits

def design_matrix(data: Dataset, analysis: str) -> np.ndarray:
    """Columns ordered (treatment, intercept, covariates...)."""
    cols = [data.A, np.ones_like(data.A)]
    if analysis == "logistic-adjusted":
        cols.extend(data.X.T)
    return np.column_stack(cols)


class LogisticPosterior:
    """Log posterior of a logistic regression with iid Normal(0, sd^2) priors."""

    def __init__(self, Z: np.ndarray, y: np.ndarray, prior_sd: float):
        self.Z, self.y, self.prec = Z, y, 1.0 / prior_sd**2

    def log_density(self, theta):
        lin = self.Z @ theta
        return float(self.y @ lin - np.logaddexp(0.0, lin).sum() - 0.5 * self.prec * theta @ theta)

    def grad(self, theta):
        p = special.expit(self.Z @ theta)
        return self.Z.T @ (self.y - p) - self.prec * theta

    def hess(self, theta):
        p = special.expit(self.Z @ theta)
        w = p * (1.0 - p)
        return -(self.Z.T * w) @ self.Z - self.prec * np.eye(self.Z.shape[1])


def detect_separation(Z: np.ndarray, y: np.ndarray, start: np.ndarray,
                      max_iter: int = 30, bound: float = 50.0) -> bool:
    """True when unpenalised likelihood ascent diverges (complete or quasi-complete separation)."""
    if y.min() == y.max():
        return True
    lp = LogisticPosterior(Z, y, 1e8)
    theta = start.copy()
    for _ in range(max_iter):
        g = lp.grad(theta)
        if np.linalg.norm(g) < 1e-8:
            return False
        h = lp.hess(theta) - 1e-10 * np.eye(theta.size)
        try:
            theta = theta - np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            return True
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > bound:
            return True
    return False


@dataclass
class PosteriorFit:
    draws: np.ndarray
    names: tuple
    method: str
    separated: bool = False
    meta: dict = field(default_factory=dict)


def fit_posterior(data: Dataset, analysis: str, prior_sd: float = 10.0, method: str = "laplace",
                  stream: Union[RngStream, np.random.Generator, None] = None, S: int = 2000,
                  cfg: Optional[ChainConfig] = None) -> PosteriorFit:
    """Posterior draws of the analysis-model coefficients.

    Logistic kinds return columns ``(eta, beta0, beta1, ...)`` (adjusted) or
    ``(gamma, alpha)`` (unadjusted). The beta-binomial kind returns
    ``(p1, p0)`` drawn from the conjugate Beta posteriors.
    """
    if analysis not in KINDS:
        raise InvalidParameterError(f"unknown analysis {analysis!r}")
    if data.A.min() == data.A.max():
        raise InvalidParameterError("both arms must be represented")
    gen = _as_generator(stream) if stream is not None else np.random.default_rng(0)
    if analysis == "beta-binomial":
        t, y = data.A == 1, data.Y
        p1 = gen.beta(y[t].sum() + 1, (1 - y[t]).sum() + 1, S)
        p0 = gen.beta(y[~t].sum() + 1, (1 - y[~t]).sum() + 1, S)
        return PosteriorFit(np.column_stack([p1, p0]), ("p1", "p0"), "exact")
    Z = design_matrix(data, analysis)
    post = LogisticPosterior(Z, data.Y, prior_sd)
    target = TargetDensity(Z.shape[1], post.log_density)
    lap = laplace_fit(target, np.zeros(Z.shape[1]), post.grad, post.hess)
    separated = detect_separation(Z, data.Y, lap.mode)
    names = (("eta", "beta0") + tuple(f"beta{j}" for j in range(1, Z.shape[1] - 1))
             if analysis == "logistic-adjusted" else ("gamma", "alpha"))
    if method == "laplace":
        chol = np.linalg.cholesky(lap.covariance)
        draws = lap.mode + gen.standard_normal((S, Z.shape[1])) @ chol.T
        return PosteriorFit(draws, names, "laplace", separated)
    if method == "mcmc":
        thin = 1
        if cfg is None:
            # random-walk draws in 7 dimensions are strongly autocorrelated; run 5x longer and thin
            thin = 5
            cfg = ChainConfig(n_chains=4, warmup=1000, keep=thin * max(S // 4, 1))
        seed_stream = stream if isinstance(stream, RngStream) else RngStream(int(gen.integers(2**63)))
        # sample in Laplace-whitened coordinates so a diagonal proposal suits correlated coefficients
        chol = np.linalg.cholesky(lap.covariance)
        white = TargetDensity(Z.shape[1], lambda z: post.log_density(lap.mode + chol @ z))
        res = sample(white, cfg, seed_stream)
        draws = lap.mode + res.chains[:, ::thin].reshape(-1, Z.shape[1]) @ chol.T
        return PosteriorFit(draws, names, "mcmc", separated,
                            {"rhat": res.rhat.tolist(), "ess": res.ess.tolist()})
    raise InvalidParameterError(f"unknown posterior method {method!r}")


def g_compute(coef_draws: np.ndarray, X_obs: np.ndarray, estimand: str = "risk-difference",
              chunk: int = 256) -> np.ndarray:
    """Posterior draws of the marginal estimand by standardising over ``X_obs``.

    ``coef_draws`` columns are ``(eta, beta0, beta1, ...)``.
    """
    coef_draws = np.atleast_2d(np.asarray(coef_draws, dtype=float))
    X1 = np.column_stack([np.ones(len(X_obs)), X_obs])
    w = np.full(len(X_obs), 1.0 / len(X_obs))
    out = np.empty(coef_draws.shape[0])
    for start in range(0, coef_draws.shape[0], chunk):
        c = coef_draws[start:start + chunk]
        lin = c[:, 1:] @ X1.T
        treated = lin + c[:, :1]
        special.expit(lin, out=lin)
        with np.errstate(invalid="ignore"):
            special.expit(treated, out=treated)
        out[start:start + chunk] = contrast(treated @ w, lin @ w, estimand)
    return out


def contrast(p1, p0, estimand: str):
    if estimand == "risk-difference":
        return p0 - p1
    if estimand == "log-relative-risk":
        with np.errstate(divide="ignore"):
            return np.log(p1) - np.log(p0)
    raise InvalidParameterError(f"unknown estimand {estimand!r}")


def psi_draws(fit: PosteriorFit, data: Dataset, estimand: str) -> np.ndarray:
    if fit.names[0] == "eta":
        return g_compute(fit.draws, data.X, estimand)
    if fit.names == ("gamma", "alpha"):
        gamma, alpha = fit.draws[:, 0], fit.draws[:, 1]
        return contrast(special.expit(alpha + gamma), special.expit(alpha), estimand)
    return contrast(fit.draws[:, 0], fit.draws[:, 1], estimand)


def decision_summary(psi_draws, psi0: float, direction: str = "greater") -> float:
    """Fraction of posterior draws strictly on the alternative side of ``psi0``."""
    psi_draws = np.asarray(psi_draws, dtype=float)
    if psi_draws.size == 0:
        raise EmptyInputError("no posterior draws")
    if direction_sign(direction) > 0:
        return float(np.mean(psi_draws > psi0))
    return float(np.mean(psi_draws < psi0))


# ---------------------------------------------------------------- conjugate oracle

def tau_conjugate(y1, n1, y0, n0) -> np.ndarray:
    """Closed-form P(p0 > p1 | data) under Beta(1, 1) priors on each arm.

    Uses the finite-sum identity for P(X_B > X_A) with X_B ~ Beta(alpha_B, beta_B)
    and integer alpha_B, summing over the arm with fewer terms. Vectorised
    over outcome pairs.
    """
    y1, y0 = np.broadcast_arrays(np.asarray(y1, dtype=np.int64), np.asarray(y0, dtype=np.int64))
    n1 = np.broadcast_to(np.asarray(n1, dtype=np.int64), y1.shape)
    n0 = np.broadcast_to(np.asarray(n0, dtype=np.int64), y1.shape)
    aA, bA = y1 + 1.0, n1 - y1 + 1.0       # p1 posterior
    aB, bB = y0 + 1.0, n0 - y0 + 1.0       # p0 posterior
    flip = aA < aB
    # P(B > A) directly sums aB terms; 1 - P(A > B) sums aA terms
    out = np.where(flip, 1.0 - _p_greater(aA, bA, aB, bB), _p_greater(aB, bB, aA, bA))
    return np.clip(out, 0.0, 1.0)[()]


def _p_greater(aB, bB, aA, bA):
    """P(X_B > X_A) for integer aB (vectorised, log-space terms)."""
    aB = np.asarray(aB, dtype=float)
    shape = aB.shape
    aB, bB, aA, bA = (np.ravel(v).astype(float) for v in np.broadcast_arrays(aB, bB, aA, bA))
    out = np.empty(aB.size)
    order = np.argsort(aB, kind="stable")
    chunk = 4096
    for s in range(0, aB.size, chunk):
        idx = order[s:s + chunk]
        k = int(aB[idx].max())
        i = np.arange(k)[None, :]
        terms = (special.betaln(aA[idx, None] + i, bA[idx, None] + bB[idx, None])
                 - np.log(bB[idx, None] + i)
                 - special.betaln(1.0 + i, bB[idx, None])
                 - special.betaln(aA[idx, None], bA[idx, None]))
        terms = np.where(i < aB[idx, None], terms, -np.inf)
        out[idx] = np.exp(special.logsumexp(terms, axis=1))
    return out.reshape(shape)


def exact_tau_conjugate(y1: int, n1: int, y0: int, n0: int) -> float:
    """P(p0 > p1 | data) by adaptive quadrature of the product of Beta posteriors.

    Integrates ``f_{p1}(x) * (1 - F_{p0}(x))`` over [0, 1], splitting the
    range at the bulk of the intervention-arm posterior.
    """
    if not (0 <= y1 <= n1 and 0 <= y0 <= n0):
        raise InvalidParameterError("need 0 <= y <= n in each arm")
    a1, b1 = y1 + 1.0, n1 - y1 + 1.0
    a0, b0 = y0 + 1.0, n0 - y0 + 1.0
    lognorm = special.betaln(a1, b1)

    def integrand(x):
        if x <= 0.0 or x >= 1.0:
            return 0.0
        dens = math.exp((a1 - 1) * math.log(x) + (b1 - 1) * math.log1p(-x) - lognorm)
        return dens * float(special.betaincc(a0, b0, x))

    mean = a1 / (a1 + b1)
    sd = math.sqrt(a1 * b1 / ((a1 + b1) ** 2 * (a1 + b1 + 1)))
    cuts = sorted({min(max(mean + k * sd, 0.0), 1.0) for k in (-12, -6, -3, -1, 0, 1, 3, 6, 12)} | {0.0, 1.0})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi > lo:
            val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)
            total += val
    return min(max(total, 0.0), 1.0)


@dataclass(frozen=True)
class ExactSamplingDistribution:
    """Exact joint distribution of tau over all (y1, y0) outcomes."""

    taus: np.ndarray     # (n1 + 1, n0 + 1), indexed [y1, y0]
    probs: np.ndarray    # same shape, sums to 1

    def tail(self, u: float) -> float:
        return float(self.probs[self.taus > u].sum())

    def mean(self) -> float:
        return float((self.probs * self.taus).sum())


def enumerate_sampling_distribution(n_per_arm: int, p1: float, p0: float) -> ExactSamplingDistribution:
    """Enumerate all (n + 1)^2 outcome pairs of the two-arm conjugate design."""
    if n_per_arm > 200:
        raise InvalidParameterError("full enumeration is limited to 200 per arm; use exact_tail_probability")
    y = np.arange(n_per_arm + 1)
    Y1, Y0 = np.meshgrid(y, y, indexing="ij")
    taus = tau_conjugate(Y1, n_per_arm, Y0, n_per_arm)
    probs = np.outer(stats.binom.pmf(y, n_per_arm, p1), stats.binom.pmf(y, n_per_arm, p0))
    return ExactSamplingDistribution(taus, probs)


def exact_tail_probability(n1: int, n0: int, p1: float, p0: float, u: float) -> float:
    """Exact P(tau > u) for the conjugate design at any arm sizes.

    tau(y1, y0) is strictly increasing in y0, so for each y1 only the first
    y0 crossing ``u`` is needed; it is located by vectorised bisection.
    """
    y1 = np.arange(n1 + 1)
    lo = np.full(n1 + 1, -1)          # tau(y1, lo) <= u (virtual at -1)
    hi = np.full(n1 + 1, n0 + 1)      # tau(y1, hi) > u (virtual at n0 + 1)
    while True:
        active = hi - lo > 1
        if not np.any(active):
            break
        mid = (lo + hi) // 2
        t = np.zeros(n1 + 1)
        t[active] = tau_conjugate(y1[active], n1, mid[active], n0)
        above = active & (t > u)
        hi = np.where(above, mid, hi)
        lo = np.where(active & ~above, mid, lo)
    # P(Y0 >= hi) for each y1
    sf = stats.binom.sf(hi - 1, n0, p0)
    return float(np.sum(stats.binom.pmf(y1, n1, p1) * sf))


# ---------------------------------------------------------------- scenario runner

@dataclass(frozen=True)
class TauSample:
    scenario: Scenario
    taus: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        if taus.ndim != 1 or np.any((taus < 0) | (taus > 1)):
            raise InvalidParameterError("taus must be a vector in [0, 1]")
        object.__setattr__(self, "taus", taus)


def _run_block(args):
    scenario, stream, size, method, S, prior_sd = args
    gen = stream.generator()
    model = scenario.model
    if model.kind == "beta-binomial":
        n1, n0 = model.arm_sizes(scenario.n)
        p0 = special.expit(model.beta[0])
        p1 = special.expit(model.beta[0] + model.eta)
        y1 = gen.binomial(n1, p1, size)
        y0 = gen.binomial(n0, p0, size)
        # both estimands reduce to the event p0 > p1 when psi0 = 0
        return np.atleast_1d(tau_conjugate(y1, n1, y0, n0)), 0, 0
    taus = np.empty(size)
    failures = separated = 0
    for i in range(size):
        for attempt in range(4):
            data = simulate_dataset(model, scenario.n, gen)
            if data.A.min() == data.A.max():
                failures += 1
                continue
            try:
                fit = fit_posterior(data, model.kind, prior_sd, method, gen, S)
            except Exception as exc:  # noqa: BLE001 - iteration-level failure is recorded
                log.debug("iteration failure: %s", exc)
                failures += 1
                continue
            separated += fit.separated
            psi = psi_draws(fit, data, scenario.estimand)
            taus[i] = decision_summary(psi, scenario.psi0, scenario.direction)
            break
        else:
            raise SimulationError(f"iteration failed repeatedly in scenario {scenario.key}")
    return taus, failures, separated


def run_scenario(scenario: Scenario, method: str = "laplace", stream: Optional[RngStream] = None,
                 S: int = 2000, prior_sd: float = 10.0, threads: int = 1) -> TauSample:
    """Simulate ``scenario.M`` trials and return one tau per trial.

    Iterations are split into fixed blocks of ``BLOCK_SIZE``; block ``b``
    draws from ``stream.substream(b)``, so the output is identical for any
    ``threads``.
    """
    stream = stream if stream is not None else RngStream(0)
    n_blocks = -(-scenario.M // BLOCK_SIZE)
    jobs = [(scenario, stream.substream(b), min(BLOCK_SIZE, scenario.M - b * BLOCK_SIZE),
             method, S, prior_sd) for b in range(n_blocks)]
    if threads > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(j) for j in jobs]
    taus = np.concatenate([r[0] for r in results])
    failures = sum(r[1] for r in results)
    separated = sum(r[2] for r in results)
    if failures > 0.01 * scenario.M:
        raise SimulationError(f"{failures} iteration failures exceed 1% of M in {scenario.key}")
    used = "exact" if scenario.model.kind == "beta-binomial" else method
    meta = {"seed": stream.seed, "stream_id": stream.stream_id, "method": used,
            "S": S if used != "exact" else 0, "prior_sd": prior_sd,
            "failures": failures, "separated": separated, "block_size": BLOCK_SIZE}
    return TauSample(scenario, taus, meta)


# ---------------------------------------------------------------- true marginal effects

def _risks(model: DataModel, etas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Marginal control risk and intervention risks at each eta."""
    if model.kind == "beta-binomial" or not model.covariates:
        p0 = special.expit(model.beta[0])
        return np.full(etas.shape, p0), special.expit(model.beta[0] + etas)
    lin = _standardisation_lin(model.beta, model.covariates)
    p0 = special.expit(lin).mean()
    p1 = np.array([special.expit(lin + e).mean() for e in etas.ravel()]).reshape(etas.shape)
    return np.full(etas.shape, p0), p1


@lru_cache(maxsize=32)
def _standardisation_lin(beta: tuple, covariates: tuple) -> np.ndarray:
    gen = RngStream(MARGINAL_SEED).generator()
    X = draw_covariates(covariates, MARGINAL_DRAWS, gen)
    return beta[0] + X @ np.asarray(beta[1:])


def marginal_effect(model: DataModel, estimand: str = "risk-difference") -> float:
    """True marginal estimand implied by ``(eta, beta)``.

    Exact for the conjugate model; otherwise standardised over 1e6 draws of
    the covariate distribution from a fixed internal stream (cached).
    """
    p0, p1 = _risks(model, np.array([model.eta]))
    return float(contrast(p1, p0, estimand)[0])


class EffectTransform:
    """Maps a conditional log-odds effect eta to the marginal estimand scale."""

    def __init__(self, model: DataModel, estimand: str = "risk-difference",
                 eta_range: tuple = (-4.0, 4.0), points: int = 401):
        self.model, self.estimand = model, estimand
        self.exact = model.kind == "beta-binomial" or not model.covariates
        if not self.exact:
            self.grid = np.linspace(*eta_range, points)
            p0, p1 = _risks(model, self.grid)
            self.values = contrast(p1, p0, estimand)

    def __call__(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.exact:
            p0, p1 = _risks(self.model, eta)
            return contrast(p1, p0, self.estimand)
        return np.interp(eta, self.grid, self.values)


def with_eta(model: DataModel, eta: float) -> DataModel:
    return replace(model, eta=float(eta))
