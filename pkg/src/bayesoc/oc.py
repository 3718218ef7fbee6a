"""Operating characteristics from fitted shape models.

Every OC is a tail probability ``P(tau > u)`` of the beta mixture. For each
hyperparameter draw ``k`` the within-shape log-normal spread of ``log a`` is
integrated out with a stratified normal rule, giving one OC value per ``k``;
credible bands are quantiles of those values, so they reflect hyperparameter
uncertainty only. Assurance additionally averages over the design prior,
pairing stratified prior draws with the log-normal strata (a Latin hypercube)
using common random numbers across ``k``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import (ConfigurationError, DirectionError, InvalidParameterError,
                     UnreachableTargetError)
from .shape import AltShapePosterior, NullShapePosterior, hyper_indices
from .stats import CredibleSummary, RngStream, reg_inc_beta
from .trial import direction_sign

DEFAULT_K = 4000
ASSURANCE_K = 500
ASSURANCE_R = 4000
NODES = 64
_LOG_CLIP = 700.0
# above this many shape evaluations the alternative tail is read from a table
TABLE_THRESHOLD = 50_000
TABLE_NODES = 8193


@dataclass(frozen=True)
class OCEstimate:
    kind: str                  # type1 | power | assurance
    n: float
    psi: Optional[float]
    u: float
    summary: CredibleSummary
    K: int
    draws: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def median(self) -> float:
        return self.summary.median

    def row(self) -> dict:
        return {"kind": self.kind, "n": self.n, "psi": "" if self.psi is None else self.psi,
                "u": self.u, "median": self.summary.median, "lo": self.summary.lo,
                "hi": self.summary.hi, "K": self.K}


def _normal_nodes(R: int) -> np.ndarray:
    return special.ndtri((np.arange(R) + 0.5) / R)


def _check_u(u: float):
    if not 0.0 < u < 1.0:
        raise InvalidParameterError("decision threshold u must lie in (0, 1)")


def _tail_from_logs(u: float, log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    a = np.exp(np.clip(log_a, -_LOG_CLIP, _LOG_CLIP))
    b = np.exp(np.clip(log_b, -_LOG_CLIP, _LOG_CLIP))
    return 1.0 - reg_inc_beta(u, a, b)


def tail_probability(shapes, u: float) -> np.ndarray:
    """``P(tau > u)`` for each beta shape (ShapeDraws, BetaParams list or (a, b) arrays)."""
    _check_u(u)
    if hasattr(shapes, "log_a"):
        return _tail_from_logs(u, shapes.log_a, shapes.log_b)
    a = np.array([s.a for s in shapes])
    b = np.array([s.b for s in shapes])
    return 1.0 - reg_inc_beta(u, a, b)


def _summarize(kind, n, psi, u, values, level=0.95) -> OCEstimate:
    return OCEstimate(kind, float(n), psi, float(u), CredibleSummary.from_draws(values, level),
                      values.size, values)


# ---------------------------------------------------------------- type I error

def _null_tail(model: NullShapePosterior, n: float, u: float, K: int, nodes: int) -> np.ndarray:
    idx = hyper_indices(model.size, K)
    z = _normal_nodes(nodes)
    la = model.mean_log_a(n)[idx, None] + model.sigma0[idx, None] * z
    if model.second is None:
        return _tail_from_logs(u, la, la).mean(axis=1)
    s = model.second
    j = idx % s.c1.size
    # independent log b strata, paired with the log a strata by a fixed permutation
    zb = z[np.random.Generator(np.random.PCG64(nodes)).permutation(nodes)]
    lb = (s.c1 / n + s.c2 / n**2)[j, None] + s.sigma[j, None] * zb
    return _tail_from_logs(u, la, lb).mean(axis=1)


def type1_curve(model: NullShapePosterior, n_grid: Sequence[float], u: float,
                K: int = DEFAULT_K, nodes: int = NODES, level: float = 0.95) -> list:
    """Type I error at each n with equal-tailed credible bands."""
    _check_u(u)
    out = []
    for n in n_grid:
        if n <= 0:
            raise InvalidParameterError("sample sizes must be positive")
        out.append(_summarize("type1", n, None, u, _null_tail(model, n, u, K, nodes), level))
    return out


# ---------------------------------------------------------------- power

def _delta(model: AltShapePosterior, psi: float, n: float) -> float:
    return math.sqrt(n) * direction_sign(model.direction) * (psi - model.psi0)


def alt_tail_table(u: float, lo: float, hi: float, nodes: int = TABLE_NODES):
    """``P(tau > u)`` for beta(a, 1/a) tabulated on a uniform grid of log a."""
    grid = np.linspace(lo, hi, nodes)
    return grid, _tail_from_logs(u, grid, -grid)


def _interp_uniform(x: np.ndarray, grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Linear interpolation on a uniform grid; ``x`` is overwritten."""
    pos = x
    pos -= grid[0]
    pos *= 1.0 / (grid[1] - grid[0])
    if pos.min() < 0.0 or pos.max() > grid.size - 1:
        np.clip(pos, 0.0, grid.size - 1, out=pos)
    i = pos.astype(np.intp)
    pos -= i
    # pad so that x == grid[-1] reads a zero slope past the end
    slope = np.append(np.diff(values), 0.0)
    out = np.append(values, values[-1])[i]
    out += slope[i] * pos
    return out


def _alt_tail(model: AltShapePosterior, delta, u: float, K: int, z: np.ndarray) -> np.ndarray:
    """OC per hyperparameter draw. ``delta`` scalar (integrate over ``z``) or
    a vector paired elementwise with ``z``.

    Large evaluations use a linear interpolation table of the exact tail in
    log a (8193 nodes over the range in use; error below 1e-6 for the
    shapes met in practice)."""
    idx = hyper_indices(model.size, K)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), z.shape)
    mag, sign = np.abs(delta), np.sign(delta)
    # log a = phi1*d + phi2*d^2 + sigma1*z with the mean extended as an odd
    # function of delta (as in AltShapePosterior.mean_log_a): one (K x 3)(3 x R) product
    coef = np.column_stack([model.phi1[idx], model.phi2[idx], model.sigma1[idx]])
    la = coef @ np.vstack([sign * mag, sign * mag**2, z])
    if la.size <= TABLE_THRESHOLD:
        return _tail_from_logs(u, la, -la).mean(axis=1)
    lo = max(float(la.min()), -_LOG_CLIP)
    hi = min(float(la.max()), _LOG_CLIP)
    if hi - lo < 1e-12:
        return _tail_from_logs(u, la, -la).mean(axis=1)
    grid, table = alt_tail_table(u, lo, hi)
    return _interp_uniform(la, grid, table).mean(axis=1)


def power_surface(model: AltShapePosterior, psi_grid: Sequence[float], n_grid: Sequence[float],
                  u: float, K: int = DEFAULT_K, nodes: int = NODES, level: float = 0.95) -> list:
    """Conditional power on the ``psi_grid`` x ``n_grid`` grid (row-major in psi).

    Effects on the null side of ``psi0`` raise :class:`DirectionError`.
    """
    _check_u(u)
    z = _normal_nodes(nodes)
    out = []
    for psi in psi_grid:
        row = []
        for n in n_grid:
            d = _delta(model, psi, n)
            if d < 0:
                raise DirectionError(f"effect {psi} lies on the null side of psi0={model.psi0} "
                                     f"for direction '{model.direction}'")
            row.append(_summarize("power", n, float(psi), u, _alt_tail(model, d, u, K, z), level))
        meds = [e.median for e in row]
        if np.any(np.diff(meds) < -1e-9) and list(n_grid) == sorted(n_grid):
            warnings.warn(f"power is not monotone in n at psi={psi}", RuntimeWarning, stacklevel=2)
        out.extend(row)
    return out


def power(model: AltShapePosterior, psi: float, n: float, u: float, **kw) -> OCEstimate:
    return power_surface(model, [psi], [n], u, **kw)[0]


# ---------------------------------------------------------------- design priors

@dataclass(frozen=True)
class DesignPrior:
    """Design prior over the effect.

    ``kind`` is ``point-mass`` (``value``), ``normal`` (``mean``, ``var``) or
    ``weighted-grid`` (``values``, ``weights``). With
    ``scale='conditional-effect'`` the prior is on the model's conditional
    effect and ``transform`` maps it to the estimand scale.
    """

    kind: str
    value: Optional[float] = None
    mean: Optional[float] = None
    var: Optional[float] = None
    values: tuple = ()
    weights: tuple = ()
    scale: str = "marginal-estimand"
    transform: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "point-mass":
            if self.value is None:
                raise InvalidParameterError("point-mass prior needs a value")
        elif self.kind == "normal":
            if self.mean is None or self.var is None or self.var <= 0:
                raise InvalidParameterError("normal prior needs a mean and a positive variance")
        elif self.kind == "weighted-grid":
            w = np.asarray(self.weights, dtype=float)
            if len(self.values) == 0 or w.size != len(self.values) or np.any(w < 0) or w.sum() <= 0:
                raise InvalidParameterError("weighted-grid prior needs matching values and non-negative weights")
        else:
            raise InvalidParameterError(f"unknown design prior kind '{self.kind}'")
        if self.scale not in ("marginal-estimand", "conditional-effect"):
            raise InvalidParameterError(f"unknown prior scale '{self.scale}'")
        if self.scale == "conditional-effect" and self.transform is None:
            raise ConfigurationError("a conditional-effect prior needs a transform to the estimand scale")

    @classmethod
    def point_mass(cls, value: float, **kw):
        return cls("point-mass", value=value, **kw)

    @classmethod
    def normal(cls, mean: float, var: float, **kw):
        return cls("normal", mean=mean, var=var, **kw)

    @classmethod
    def weighted_grid(cls, values, weights, **kw):
        return cls("weighted-grid", values=tuple(float(v) for v in values),
                   weights=tuple(float(w) for w in weights), **kw)

    def quantile(self, p: np.ndarray) -> np.ndarray:
        """Inverse CDF on the prior's own scale."""
        p = np.asarray(p, dtype=float)
        if self.kind == "point-mass":
            return np.full(p.shape, float(self.value))
        if self.kind == "normal":
            return self.mean + math.sqrt(self.var) * special.ndtri(p)
        w = np.asarray(self.weights, dtype=float)
        cdf = np.cumsum(w / w.sum())
        cdf[-1] = 1.0
        return np.asarray(self.values)[np.searchsorted(cdf, p, side="right").clip(0, len(cdf) - 1)]

    def stratified_psi(self, R: int, gen: np.random.Generator) -> np.ndarray:
        """R stratified draws mapped to the estimand scale."""
        p = (np.arange(R) + gen.random(R)) / R
        x = self.quantile(p)
        if self.scale == "conditional-effect":
            x = np.asarray(self.transform(x), dtype=float)
        return x


# ---------------------------------------------------------------- assurance

def _assurance_draws(model: AltShapePosterior, prior: DesignPrior, n: float, u: float,
                     K: int, R: int, stream: RngStream) -> np.ndarray:
    gen = stream.generator()
    psi = prior.stratified_psi(R, gen)
    z = _normal_nodes(R)[gen.permutation(R)]
    delta = math.sqrt(n) * direction_sign(model.direction) * (psi - model.psi0)
    return _alt_tail(model, delta, u, K, z)


def assurance(model: AltShapePosterior, prior: DesignPrior, n: float, u: float,
              K: int = ASSURANCE_K, R: int = ASSURANCE_R, stream: Optional[RngStream] = None,
              level: float = 0.95) -> OCEstimate:
    """Expected power over ``prior``. Prior mass on the null side contributes
    small (mirrored) success probabilities rather than an error."""
    _check_u(u)
    if n <= 0:
        raise InvalidParameterError("n must be positive")
    vals = _assurance_draws(model, prior, n, u, K, R, stream or RngStream(0))
    return _summarize("assurance", n, None, u, vals, level)


def assurance_nuisance_grid(models: Sequence[AltShapePosterior], weights: Sequence[float],
                            priors: Union[DesignPrior, Sequence[DesignPrior]], n: float, u: float,
                            K: int = ASSURANCE_K, R: int = ASSURANCE_R,
                            stream: Optional[RngStream] = None, level: float = 0.95) -> OCEstimate:
    """Assurance averaged over a nuisance-parameter grid, one fitted model per point.

    ``priors`` may be one prior shared by all points or one per point (a
    conditional-effect prior needs a point-specific transform).
    """
    models = list(models)
    w = np.asarray(weights, dtype=float)
    if isinstance(priors, DesignPrior):
        priors = [priors] * len(models)
    priors = list(priors)
    if not models or w.size != len(models) or len(priors) != len(models):
        raise ConfigurationError("nuisance grid, weights and priors must have matching lengths")
    if np.any(w < 0) or w.sum() <= 0:
        raise ConfigurationError("nuisance weights must be non-negative and not all zero")
    w = w / w.sum()
    stream = stream or RngStream(0)
    total = np.zeros(K)
    for wi, m, p in zip(w, models, priors):
        total += wi * _assurance_draws(m, p, n, u, K, R, stream)
    return _summarize("assurance", n, None, u, total, level)


# ---------------------------------------------------------------- sample size

@dataclass(frozen=True)
class SampleSizeResult:
    n: int
    estimate: OCEstimate
    evaluated: dict


def find_sample_size(model: AltShapePosterior, prior: DesignPrior, u: float, target: float,
                     n_range: tuple = (2, 100_000), K: int = ASSURANCE_K, R: int = ASSURANCE_R,
                     stream: Optional[RngStream] = None) -> SampleSizeResult:
    """Smallest integer n in ``n_range`` whose assurance median reaches ``target``.

    Uses bisection, so it assumes assurance is non-decreasing in n (true
    when the design prior sits on the benefit side).
    """
    if not 0 <= target < 1:
        raise InvalidParameterError("target must lie in [0, 1)")
    lo, hi = int(n_range[0]), int(n_range[1])
    if lo < 1 or hi < lo:
        raise InvalidParameterError("invalid n range")
    stream = stream or RngStream(0)
    cache: dict = {}

    def at(n):
        if n not in cache:
            cache[n] = assurance(model, prior, n, u, K, R, stream)
        return cache[n]

    if at(hi).median < target:
        best = max(cache, key=lambda k: cache[k].median)
        raise UnreachableTargetError(
            f"assurance target {target} not reached by n={hi} (max {cache[best].median:.4f})",
            cache[best].median, best)
    if at(lo).median >= target:
        return SampleSizeResult(lo, at(lo), {k: v.median for k, v in cache.items()})
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid).median >= target:
            hi = mid
        else:
            lo = mid
    return SampleSizeResult(hi, at(hi), {k: v.median for k, v in sorted(cache.items())})


# ---------------------------------------------------------------- export

CSV_COLUMNS = ("kind", "n", "psi", "u", "median", "lo", "hi", "K")


def write_csv(estimates: Sequence[OCEstimate], path, prior_names: Optional[Sequence[str]] = None) -> None:
    """One row per estimate; ``prior_names`` adds a trailing ``prior`` column."""
    fields = CSV_COLUMNS + (("prior",) if prior_names is not None else ())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for i, e in enumerate(estimates):
            row = {k: (repr(float(v)) if isinstance(v, float) else v) for k, v in e.row().items()}
            if prior_names is not None:
                row["prior"] = prior_names[i]
            writer.writerow(row)


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
