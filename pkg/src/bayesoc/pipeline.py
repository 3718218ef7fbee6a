"""Simulate -> fit -> evaluate orchestration shared by the CLI and tests."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import special

from .config import RunConfig, dump_config, parse_config
from .errors import ConvergenceWarning, InsufficientDesignError
from .mcmc import ChainConfig
from .oc import (DesignPrior, assurance, find_sample_size, power_surface, type1_curve,
                 write_csv)
from .plot import series_from_estimates, write_svg
from .shape import (AltShapePosterior, NullShapePosterior, QuantileGrid, QuantileMatrix,
                    Stage1Posterior, build_quantile_matrix, scenario_delta, stage1_fit_all,
                    stage2_fit_alt, stage2_fit_null)
from .stats import RngStream
from .store import (StoreError, file_digest, read_alt_posterior, read_null_posterior, read_tau_sample,
                    write_alt_posterior, write_manifest, write_null_posterior, write_quantile_matrix,
                    write_stage1, write_tau_sample)
from .trial import EffectTransform, direction_for, exact_tail_probability, run_scenario

log = logging.getLogger(__name__)

SIM_STREAM = 1
FIT_STREAM = 2
OC_STREAM = 3


# ---------------------------------------------------------------- simulate

def simulate(cfg: RunConfig, out_dir=None, threads: int = 1) -> list:
    """Run every configured scenario; returns ``(TauSample, role)`` pairs.

    With ``out_dir`` the samples, a manifest and a separate timings file are
    written. Wall times live only in ``timings.json`` so the samples and the
    manifest are byte-identical across reruns.
    """
    root = RngStream(cfg.io.seed, SIM_STREAM)
    results, timings = [], {}
    for i, (sc, role) in enumerate(cfg.build_scenarios()):
        t0 = time.perf_counter()
        smp = run_scenario(sc, cfg.fit.posterior_method, root.substream(i), cfg.fit.S,
                           cfg.fit.prior_sd, threads)
        timings[sc.key] = time.perf_counter() - t0
        results.append((smp, role))
    if out_dir is not None:
        out = Path(out_dir)
        files, entries = [], []
        for i, (smp, role) in enumerate(results):
            f = write_tau_sample(smp, out / "samples" / f"scenario_{i:03d}.txt")
            files.append(f)
            entries.append({"file": str(f.relative_to(out)), "key": smp.scenario.key, "role": role,
                            "n": smp.scenario.n, "eta": smp.scenario.model.eta,
                            "seed": cfg.io.seed, "stream": [SIM_STREAM, i],
                            "failures": smp.meta.get("failures", 0)})
        doc = dump_config(cfg)
        doc["io"].pop("out", None)   # keep artifacts independent of where they are written
        (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        write_manifest(out, files + [out / "config.json"], {"scenarios": entries, "seed": cfg.io.seed})
        (out / "timings.json").write_text(json.dumps(
            {"wall_seconds": timings, "total": sum(timings.values())}, indent=2, sort_keys=True) + "\n")
    return results


def load_simulation(out_dir) -> tuple[RunConfig, list]:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = parse_config(json.loads((out / "config.json").read_text()))
    digests = manifest.get("files", {})
    pairs = []
    for e in manifest["scenarios"]:
        path = out / e["file"]
        if not path.exists():
            raise StoreError(f"{e['file']}: listed in the manifest but missing")
        if e["file"] in digests and file_digest(path) != digests[e["file"]]:
            raise StoreError(f"{e['file']}: contents do not match the manifest digest")
        smp = read_tau_sample(path)
        if smp.scenario.key != e["key"]:
            raise StoreError(f"{e['file']}: header scenario does not match the manifest")
        pairs.append((smp, e["role"]))
    return cfg, pairs


# ---------------------------------------------------------------- fit

@dataclass
class FitResult:
    quantiles: QuantileMatrix
    stage1: Stage1Posterior
    null: Optional[NullShapePosterior]
    alt: Optional[AltShapePosterior]

    def diagnostics(self) -> dict:
        d = {"stage1_flagged": self.stage1.flagged}
        for name, m in (("null", self.null), ("alt", self.alt)):
            if m is not None:
                d[name] = {"rhat": [float(x) for x in m.rhat], "ess": [float(x) for x in m.ess],
                           "converged": m.converged}
        return d

    @property
    def converged(self) -> bool:
        return all(m.converged for m in (self.null, self.alt) if m is not None)


def fit_samples(samples, cfg: RunConfig, threads: int = 1) -> FitResult:
    """Two-stage fit on the training samples (a list of TauSample)."""
    fc = cfg.fit
    grid = QuantileGrid(tuple(fc.quantile_grid))
    qm = build_quantile_matrix(samples, grid, cfg.scenarios.psi0)
    chain = ChainConfig(n_chains=fc.chains, warmup=fc.warmup, keep=fc.keep, init_jitter=1.0)
    root = RngStream(cfg.io.seed, FIT_STREAM)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        stage1 = stage1_fit_all(qm, fc.sigma_eps, root.substream(0), chain, fc.asymmetric_null, threads)
    null = alt = None
    reasons = []
    n_null = len({e.n for e in stage1.entries if e.hypothesis == "null"})
    n_alt = len({round(e.delta, 12) for e in stage1.entries if e.hypothesis == "alt"})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if n_null:
            try:
                null = stage2_fit_null(stage1, root.substream(1), chain)
            except InsufficientDesignError as exc:
                reasons.append(str(exc))
        if n_alt:
            try:
                alt = stage2_fit_alt(stage1, root.substream(2), chain, nonneg_quadratic=fc.nonneg_quadratic,
                                     psi0=cfg.scenarios.psi0, direction=direction_for(cfg.scenarios.estimand))
            except InsufficientDesignError as exc:
                reasons.append(str(exc))
    if null is None and alt is None:
        raise InsufficientDesignError("; ".join(reasons) or "no training scenarios")
    for r in reasons:
        log.warning("skipped: %s", r)
    return FitResult(qm, stage1, null, alt)


def write_fit(fit: FitResult, fit_dir) -> list:
    d = Path(fit_dir)
    files = [write_quantile_matrix(fit.quantiles, d / "quantiles.txt"), write_stage1(fit.stage1, d / "stage1.txt")]
    if fit.null is not None:
        files.append(write_null_posterior(fit.null, d / "null.txt"))
    if fit.alt is not None:
        files.append(write_alt_posterior(fit.alt, d / "alt.txt"))
    diag = d / "diagnostics.json"
    diag.write_text(json.dumps(fit.diagnostics(), indent=2, sort_keys=True) + "\n")
    return files + [diag]


def load_models(fit_dir) -> tuple[Optional[NullShapePosterior], Optional[AltShapePosterior]]:
    d = Path(fit_dir)
    null = read_null_posterior(d / "null.txt") if (d / "null.txt").exists() else None
    alt = read_alt_posterior(d / "alt.txt") if (d / "alt.txt").exists() else None
    if null is None and alt is None:
        raise StoreError(f"no fitted models in {d}")
    return null, alt


# ---------------------------------------------------------------- oc reports

def build_prior(p, cfg: RunConfig) -> DesignPrior:
    transform = None
    if p.scale == "conditional-effect":
        transform = EffectTransform(cfg.data.base_model(), cfg.scenarios.estimand)
    return DesignPrior(p.kind, value=p.value, mean=p.mean, var=p.var, values=tuple(p.values),
                       weights=tuple(p.weights), scale=p.scale, transform=transform)


def _crossing(estimates, target):
    ns = np.array([e.n for e in estimates])
    med = np.array([e.median for e in estimates])
    above = np.flatnonzero(med >= target)
    return None if above.size == 0 else float(ns[above[0]])


def oc_reports(null, alt, cfg: RunConfig, out_dir) -> list:
    """Type I, power and assurance CSV tables plus SVG curves."""
    oc = cfg.oc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    n_grid = oc.n_grid or sorted({s.n for s, _ in cfg.build_scenarios()})
    stream = RngStream(cfg.io.seed, OC_STREAM)
    if null is not None:
        est, series = [], []
        for u in oc.u:
            curve = type1_curve(null, n_grid, u, K=oc.K)
            est += curve
            series.append(series_from_estimates(curve, f"u={u:g}"))
        files.append(_csv(est, out / "type1.csv"))
        files.append(write_svg(out / "type1.svg", series, title="Type I error", ylabel="P(tau > u)",
                               hlines=[1 - u for u in oc.u]))
    if alt is not None and oc.psi_grid:
        est, series = [], []
        for u in oc.u:
            surf = power_surface(alt, oc.psi_grid, n_grid, u, K=oc.K)
            est += surf
            for psi in oc.psi_grid:
                series.append(series_from_estimates([e for e in surf if e.psi == psi], f"psi={psi:g}, u={u:g}"))
        files.append(_csv(est, out / "power.csv"))
        files.append(write_svg(out / "power.svg", series, title="Power", ylabel="P(tau > u)", ylim=(0, 1)))
    if alt is not None and oc.priors:
        est, series, crossings = [], [], []
        for i, p in enumerate(oc.priors):
            prior = build_prior(p, cfg)
            for u in oc.u:
                curve = [assurance(alt, prior, n, u, oc.assurance_K, oc.R, stream) for n in n_grid]
                est += curve
                series.append(series_from_estimates(curve, f"{p.name}, u={u:g}", dashed=i % 2 == 1))
                if oc.assurance_target is not None:
                    x = _crossing(curve, oc.assurance_target)
                    if x is not None:
                        crossings.append((x, f"{p.name}: n={x:g}"))
        files.append(_csv(est, out / "assurance.csv", names=[p.name for p in oc.priors for _ in oc.u for _ in n_grid]))
        hl = [oc.assurance_target] if oc.assurance_target is not None else []
        files.append(write_svg(out / "assurance.svg", series, title="Assurance", ylabel="assurance",
                               hlines=hl, crossings=crossings, ylim=(0, 1)))
    return files


def _csv(estimates, path, names=None):
    write_csv(estimates, path, prior_names=names)
    return Path(path)


def sample_size_report(alt, cfg: RunConfig, out_dir) -> list:
    oc = cfg.oc
    if oc.assurance_target is None or not oc.priors:
        raise ValueError("sample size search needs oc.assurance_target and at least one prior")
    rows = []
    for p in oc.priors:
        prior = build_prior(p, cfg)
        for u in oc.u:
            res = find_sample_size(alt, prior, u, oc.assurance_target, tuple(oc.n_range),
                                   oc.assurance_K, oc.R, RngStream(cfg.io.seed, OC_STREAM))
            s = res.estimate.summary
            rows.append({"prior": p.name, "u": u, "target": oc.assurance_target, "n": res.n,
                         "median": s.median, "lo": s.lo, "hi": s.hi})
    path = Path(out_dir) / "ssd.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


# ---------------------------------------------------------------- validation

def exact_oc(sample_scenario, u: float) -> float:
    model = sample_scenario.model
    n1, n0 = model.arm_sizes(sample_scenario.n)
    p0 = float(special.expit(model.beta[0]))
    p1 = float(special.expit(model.beta[0] + model.eta))
    return exact_tail_probability(n1, n0, p1, p0, u)


def validate(cfg: RunConfig, threads: int = 1, type1_tol: float = 0.01, power_tol: float = 0.05) -> list:
    """Fit on training scenarios and compare held-out OCs with the exact oracle."""
    if cfg.data.kind != "beta-binomial":
        raise ValueError("validation needs the conjugate beta-binomial model")
    pairs = simulate(cfg, threads=threads)
    fit = fit_samples([s for s, r in pairs if r == "train"], cfg, threads)
    return oracle_rows(cfg, pairs, fit, type1_tol, power_tol)


def oracle_rows(cfg: RunConfig, pairs, fit: FitResult, type1_tol: float = 0.01,
                power_tol: float = 0.05) -> list:
    """Model OC vs the exact enumeration for every simulated scenario."""
    rows = []
    for smp, role in pairs:
        sc = smp.scenario
        for u in cfg.oc.u:
            exact = exact_oc(sc, u)
            if sc.model.eta == 0:
                if fit.null is None:
                    continue
                est = type1_curve(fit.null, [sc.n], u, K=cfg.oc.K)[0]
                kind, tol = "type1", type1_tol
            else:
                if fit.alt is None:
                    continue
                d = scenario_delta(smp, cfg.scenarios.psi0)
                psi = cfg.scenarios.psi0 + d / np.sqrt(sc.n) * (1 if fit.alt.direction == "greater" else -1)
                est = power_surface(fit.alt, [psi], [sc.n], u, K=cfg.oc.K)[0]
                kind, tol = "power", power_tol
            diff = est.median - exact
            rows.append({"key": sc.key, "role": role, "kind": kind, "n": sc.n, "u": u,
                         "model": est.median, "lo": est.summary.lo, "hi": est.summary.hi,
                         "exact": exact, "diff": diff, "tol": tol,
                         "pass": bool(abs(diff) <= tol) if role == "test" else None})
    return rows


NULL_SUITE = {
    "data": {"kind": "beta-binomial", "control_rate": 0.3},
    "scenarios": {"M": 5000, "groups": [
        {"eta": 0.0, "n": [20, 80, 200, 1000], "role": "train"},
        {"eta": 0.0, "n": [40, 120, 400], "role": "test"}]},
    "io": {"seed": 20240229},
}

# per-arm sample-size sequences, one per risk difference (larger effects at smaller n)
_POWER_ROWS = {0.25: (10, 20, 30, 40, 50), 0.20: (20, 40, 60, 80, 100),
               0.15: (50, 100, 150, 200, 250), 0.10: (100, 200, 300, 400, 500)}


def _power_groups():
    """12 training and 28 test scenarios with distinct (effect, n) pairs.

    Training takes the first, middle and last sizes of each sequence; the
    test set holds the other two plus the sequence shifted by half a step.
    """
    groups = []
    for rd, seq in _POWER_ROWS.items():
        half = (seq[1] - seq[0]) // 2
        groups.append({"psi": rd, "n": [2 * seq[0], 2 * seq[2], 2 * seq[4]], "role": "train"})
        groups.append({"psi": rd, "n": [2 * seq[1], 2 * seq[3]], "role": "test"})
        groups.append({"psi": rd, "n": [2 * (m + half) for m in seq], "role": "test"})
    return groups


POWER_SUITE = {
    "data": {"kind": "beta-binomial", "control_rate": 0.5},
    "scenarios": {"M": 5000, "groups": _power_groups()},
    "fit": {"sigma_eps": "auto",
            "quantile_grid": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 0.99]},
    "io": {"seed": 20240229},
}


def default_suites(seed: Optional[int] = None) -> list:
    out = []
    for doc in (NULL_SUITE, POWER_SUITE):
        doc = json.loads(json.dumps(doc))
        if seed is not None:
            doc["io"]["seed"] = seed
        out.append(parse_config(doc))
    return out
