"""Adaptive random-walk Metropolis with split-R-hat / ESS diagnostics, plus a
Laplace (Gaussian-at-the-mode) approximation.

Adaptation only happens during warmup: the log step size follows a
Robbins-Monro recursion toward ``target_accept`` and, halfway through warmup,
the diagonal proposal scales are reset to the marginal standard deviations
of the chain so far. Kept iterations use a frozen proposal, so the kept
chain is a proper Markov chain.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import optimize

from .errors import ConvergenceWarning, CurvatureError, InitializationError, InvalidParameterError
from .stats import RngStream

log = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.05


@dataclass(frozen=True)
class TargetDensity:
    dim: int
    log_density: Callable[[np.ndarray], float]


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 4
    warmup: int = 1000
    keep: int = 1000
    target_accept: float = 0.3
    init_jitter: float = 0.1

    def __post_init__(self):
        if self.n_chains < 2:
            raise InvalidParameterError("n_chains must be at least 2")
        if self.warmup <= 0 or self.keep <= 0:
            raise InvalidParameterError("warmup and keep must be positive")
        if not 0 < self.target_accept < 1:
            raise InvalidParameterError("target_accept must be in (0, 1)")
        if self.init_jitter <= 0:
            raise InvalidParameterError("init_jitter must be positive")


@dataclass(frozen=True)
class PosteriorDraws:
    chains: np.ndarray            # (n_chains, keep, dim)
    rhat: np.ndarray              # (dim,)
    ess: np.ndarray               # (dim,)
    accept_rate: np.ndarray       # (n_chains,)
    proposal_sd: np.ndarray       # (n_chains, dim), frozen after warmup
    warnings: tuple = field(default=())

    @property
    def draws(self) -> np.ndarray:
        c, k, d = self.chains.shape
        return self.chains.reshape(c * k, d)

    @property
    def converged(self) -> bool:
        return bool(np.all(self.rhat <= RHAT_THRESHOLD))


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction, one value per dimension (>= 1)."""
    chains = np.asarray(chains, dtype=float)
    c, n, d = chains.shape
    half = n // 2
    if half < 2:
        return np.full(d, np.nan)
    split = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean(axis=0)
    b = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b / half
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    r = np.where(w > 0, r, np.where(b > 0, np.inf, 1.0))
    return np.maximum(r, 1.0)


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    chains = np.asarray(chains, dtype=float)
    c, n, d = chains.shape
    out = np.empty(d)
    for j in range(d):
        x = chains[:, :, j]
        w = x.var(axis=1, ddof=1).mean()
        if w <= 0:
            out[j] = c * n
            continue
        var_plus = (n - 1) / n * w + (x.mean(axis=1).var(ddof=1) if c > 1 else 0.0)
        centered = x - x.mean(axis=1, keepdims=True)
        nfft = 1 << (2 * n - 1).bit_length()
        f = np.fft.rfft(centered, nfft, axis=1)
        acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n] / n
        rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        tau = -1.0
        prev = np.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair <= 0:
                break
            pair = min(pair, prev)
            tau += 2.0 * pair
            prev = pair
            t += 2
        out[j] = min(c * n / max(tau, 1e-12), c * n)
    return out


def _init_point(target, init, scale, jitter, gen, tries=100):
    for _ in range(tries):
        x = init + jitter * scale * gen.standard_normal(target.dim)
        lp = target.log_density(x)
        if np.isfinite(lp):
            return x, lp
    lp = target.log_density(init)
    if np.isfinite(lp):
        return init.copy(), lp
    raise InitializationError("no finite log density found near the initial point")


def _run_chain(target, cfg, stream, init, scale):
    gen = stream.generator()
    d = target.dim
    x, lp = _init_point(target, init, scale, cfg.init_jitter, gen)
    scale = scale.copy()
    base = np.log(2.38 / np.sqrt(d))
    log_step = base
    t0 = 0
    mid = cfg.warmup // 2
    history = np.empty((cfg.warmup, d))
    for t in range(cfg.warmup):
        if t == mid and mid >= 8:
            sd = history[mid // 2:mid].std(axis=0)
            if np.all(np.isfinite(sd)) and np.all(sd > 0):
                scale = sd
                log_step = base
                t0 = t
        prop = x + np.exp(log_step) * scale * gen.standard_normal(d)
        lp_prop = target.log_density(prop)
        accept_prob = np.exp(min(0.0, lp_prop - lp)) if np.isfinite(lp_prop) else 0.0
        if gen.random() < accept_prob:
            x, lp = prop, lp_prop
        log_step += (t - t0 + 1) ** -0.6 * (accept_prob - cfg.target_accept)
        history[t] = x
    step = np.exp(log_step) * scale
    kept = np.empty((cfg.keep, d))
    accepted = 0
    for t in range(cfg.keep):
        prop = x + step * gen.standard_normal(d)
        lp_prop = target.log_density(prop)
        if np.isfinite(lp_prop) and np.log(gen.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepted += 1
        kept[t] = x
    return kept, accepted / cfg.keep, step


def sample(target: TargetDensity, cfg: ChainConfig, stream: RngStream,
           init: Optional[np.ndarray] = None, scale: Optional[np.ndarray] = None) -> PosteriorDraws:
    """Run ``cfg.n_chains`` adaptive random-walk Metropolis chains.

    Each chain draws from its own sub-stream of ``stream`` so results do not
    depend on execution order. ``scale`` sets the initial per-dimension
    proposal (and jitter) scale; adaptation refines it during warmup.
    """
    if target.dim < 1 or target.dim > 50:
        raise InvalidParameterError("target dimension must be in [1, 50]")
    init = np.zeros(target.dim) if init is None else np.asarray(init, dtype=float).reshape(target.dim)
    scale = np.ones(target.dim) if scale is None else np.broadcast_to(
        np.asarray(scale, dtype=float), (target.dim,)).copy()
    chains, rates, steps = [], [], []
    for c in range(cfg.n_chains):
        kept, rate, step = _run_chain(target, cfg, stream.substream(c), init, scale)
        chains.append(kept)
        rates.append(rate)
        steps.append(step)
    chains = np.stack(chains)
    rhat = split_rhat(chains)
    ess = effective_sample_size(chains)
    notes = ()
    if np.any(rhat > RHAT_THRESHOLD):
        msg = f"split R-hat above {RHAT_THRESHOLD}: max {np.max(rhat):.3f}"
        notes = (msg,)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return PosteriorDraws(chains, rhat, ess, np.asarray(rates), np.stack(steps), notes)


class LaplaceFit(NamedTuple):
    mode: np.ndarray
    covariance: np.ndarray


def _fd_gradient(f, x, h):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2 * h[i])
    return g


def _fd_hessian(f, x, h):
    d = x.size
    hess = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess


def laplace_fit(target: TargetDensity, init, grad: Optional[Callable] = None,
                hess: Optional[Callable] = None, gtol: float = 1e-6,
                max_iter: int = 100) -> LaplaceFit:
    """Gaussian approximation at the posterior mode.

    With analytic ``grad`` and ``hess`` the mode is found by damped Newton
    ascent; otherwise BFGS is used and the Hessian is taken by central
    finite differences.
    """
    x = np.asarray(init, dtype=float).reshape(target.dim).copy()
    f = target.log_density
    if grad is not None and hess is not None:
        x = _newton_ascent(f, grad, hess, x, gtol, max_iter)
        h = hess(x)
        g = grad(x)
    else:
        res = optimize.minimize(lambda z: -f(z), x, method="BFGS", options={"gtol": gtol * 1e-2})
        x = res.x
        step = 1e-4 * np.maximum(1.0, np.abs(x))
        # Newton polish with finite-difference derivatives
        for _ in range(5):
            g = _fd_gradient(f, x, step)
            h = _fd_hessian(f, x, step)
            if np.linalg.norm(g) <= gtol:
                break
            try:
                x = x - np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                break
        g = _fd_gradient(f, x, step)
        h = _fd_hessian(f, x, step)
    if np.linalg.norm(g) > gtol:
        log.warning("laplace_fit: gradient norm %.2e above tolerance", np.linalg.norm(g))
    neg = -0.5 * (h + h.T)
    try:
        chol = np.linalg.cholesky(neg)
    except np.linalg.LinAlgError as exc:
        raise CurvatureError("Hessian is not negative definite at the mode") from exc
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return LaplaceFit(x, 0.5 * (cov + cov.T))


def _newton_ascent(f, grad, hess, x, gtol, max_iter):
    fx = f(x)
    for _ in range(max_iter):
        g = grad(x)
        if np.linalg.norm(g) <= gtol:
            break
        h = hess(x)
        try:
            direction = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            direction = g
        if direction @ g <= 0:
            direction = g
        t = 1.0
        while t > 1e-10:
            cand = x + t * direction
            fc = f(cand)
            if np.isfinite(fc) and fc >= fx - 1e-12 * abs(fx):
                break
            t *= 0.5
        x, fx = cand, fc
    return x
