"""Run configuration: YAML files validated against a versioned schema.

Unknown keys are rejected so that a typo in a scenario grid fails loudly.
Validation errors carry the dotted path of the offending field.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy import special

from .errors import ConfigurationError
from .shape import DEFAULT_PROBS
from .trial import DEFAULT_COVARIATES, DEFAULT_BETA, Covariate, DataModel, Scenario, direction_for

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CovariateConfig(_Strict):
    name: str
    kind: Literal["bernoulli", "normal", "square"]
    params: List[float] = Field(default_factory=list)


class DataConfig(_Strict):
    kind: Literal["beta-binomial", "logistic-adjusted", "logistic-unadjusted"] = "beta-binomial"
    beta: Optional[List[float]] = None
    control_rate: Optional[float] = Field(default=None, gt=0, lt=1)
    covariates: Optional[List[CovariateConfig]] = None
    alloc_ratio: float = Field(default=0.5, gt=0, lt=1)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "beta-binomial":
            if self.covariates:
                raise ValueError("the beta-binomial model takes no covariates")
            if (self.beta is None) == (self.control_rate is None):
                raise ValueError("give exactly one of beta (intercept) or control_rate")
            if self.beta is not None and len(self.beta) != 1:
                raise ValueError("beta-binomial beta is a single intercept")
        elif self.control_rate is not None:
            raise ValueError("control_rate applies to the beta-binomial model only")
        return self

    def base_model(self) -> DataModel:
        if self.kind == "beta-binomial":
            beta = (special.logit(self.control_rate),) if self.beta is None else tuple(self.beta)
            return DataModel(self.kind, beta, 0.0, ())
        covs = DEFAULT_COVARIATES if self.covariates is None else tuple(
            Covariate(c.name, c.kind, tuple(c.params)) for c in self.covariates)
        beta = DEFAULT_BETA if self.beta is None else tuple(self.beta)
        return DataModel(self.kind, beta, 0.0, covs, self.alloc_ratio)


class GroupConfig(_Strict):
    eta: Optional[float] = None
    psi: Optional[float] = None
    n: List[int] = Field(min_length=1)
    role: Literal["train", "test"] = "train"

    @model_validator(mode="after")
    def _one_effect(self):
        if (self.eta is None) == (self.psi is None):
            raise ValueError("give exactly one of eta or psi")
        if any(v < 2 for v in self.n):
            raise ValueError("sample sizes must be at least 2")
        return self


class ScenarioConfig(_Strict):
    M: int = Field(default=10_000, ge=100)
    estimand: Literal["risk-difference", "log-relative-risk"] = "risk-difference"
    psi0: float = 0.0
    direction: Optional[Literal["greater", "less"]] = None
    groups: List[GroupConfig] = Field(min_length=1)

    @model_validator(mode="after")
    def _direction(self):
        if self.direction is not None and self.direction != direction_for(self.estimand):
            raise ValueError(f"direction for {self.estimand} must be '{direction_for(self.estimand)}'")
        return self


class FitConfig(_Strict):
    quantile_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_PROBS))
    sigma_eps: Union[Literal["auto"], float] = 1e-4
    posterior_method: Literal["laplace", "mcmc"] = "laplace"
    S: int = Field(default=2000, ge=100)
    prior_sd: float = Field(default=10.0, gt=0)
    asymmetric_null: bool = False
    nonneg_quadratic: bool = False
    chains: int = Field(default=4, ge=2)
    warmup: int = Field(default=1000, ge=10)
    keep: int = Field(default=1000, ge=10)

    @field_validator("quantile_grid")
    @classmethod
    def _grid(cls, v):
        a = np.asarray(v, dtype=float)
        if a.size == 0 or np.any((a <= 0) | (a >= 1)) or np.any(np.diff(a) <= 0):
            raise ValueError("quantile grid must be strictly increasing inside (0, 1)")
        return v

    @field_validator("sigma_eps")
    @classmethod
    def _sigma(cls, v):
        if v != "auto" and not v > 0:
            raise ValueError("sigma_eps must be positive or 'auto'")
        return v


class PriorConfig(_Strict):
    name: str
    kind: Literal["point-mass", "normal", "weighted-grid"]
    value: Optional[float] = None
    mean: Optional[float] = None
    var: Optional[float] = Field(default=None, gt=0)
    values: List[float] = Field(default_factory=list)
    weights: List[float] = Field(default_factory=list)
    scale: Literal["marginal-estimand", "conditional-effect"] = "marginal-estimand"


class OCConfig(_Strict):
    u: List[float] = Field(default_factory=lambda: [0.975], min_length=1)
    n_grid: List[int] = Field(default_factory=list)
    psi_grid: List[float] = Field(default_factory=list)
    priors: List[PriorConfig] = Field(default_factory=list)
    assurance_target: Optional[float] = Field(default=None, gt=0, lt=1)
    n_range: List[int] = Field(default_factory=lambda: [2, 100_000], min_length=2, max_length=2)
    K: int = Field(default=4000, ge=10)
    assurance_K: int = Field(default=500, ge=10)
    R: int = Field(default=4000, ge=10)

    @field_validator("u")
    @classmethod
    def _u(cls, v):
        if any(not 0 < x < 1 for x in v):
            raise ValueError("decision thresholds must lie in (0, 1)")
        return v


class IOConfig(_Strict):
    out: str = "out"
    seed: int = Field(ge=0, lt=2**63)


class RunConfig(_Strict):
    schema_version: Literal[1] = 1
    data: DataConfig = Field(default_factory=DataConfig)
    scenarios: ScenarioConfig
    fit: FitConfig = Field(default_factory=FitConfig)
    oc: OCConfig = Field(default_factory=OCConfig)
    io: IOConfig

    @model_validator(mode="after")
    def _unique(self):
        keys = [s.key for s, _ in self.build_scenarios()]
        dup = {k for k in keys if keys.count(k) > 1}
        if dup:
            raise ValueError(f"duplicate scenarios: {sorted(dup)}")
        return self

    def build_scenarios(self) -> list:
        """``(Scenario, role)`` pairs in configuration order."""
        base = self.data.base_model()
        sc = self.scenarios
        out = []
        for g in sc.groups:
            eta = g.eta if g.eta is not None else _eta_for_psi(base, g.psi, sc.estimand)
            model = DataModel(base.kind, base.beta, float(eta), base.covariates, base.alloc_ratio)
            for n in g.n:
                out.append((Scenario(model, n, sc.psi0, sc.estimand, sc.M), g.role))
        return out


def _eta_for_psi(model: DataModel, psi: float, estimand: str) -> float:
    if model.kind != "beta-binomial":
        raise ValueError("effects given as psi are supported for the beta-binomial model only; use eta")
    p0 = float(special.expit(model.beta[0]))
    p1 = p0 - psi if estimand == "risk-difference" else p0 * float(np.exp(psi))
    if not 0 < p1 < 1:
        raise ValueError(f"psi={psi} gives an intervention risk outside (0, 1)")
    return float(special.logit(p1) - special.logit(p0))


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc)) from exc


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """Read and validate a YAML config; ``seed``/``out`` override the io block."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError:
        raise
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    io = dict(doc.get("io") or {})
    if seed is not None:
        io["seed"] = seed
    if out is not None:
        io["out"] = out
    doc["io"] = io
    return parse_config(doc)


def dump_config(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")
