"""Columnar text persistence.

Every file starts with ``# key: <json>`` header lines (always including
``schema_version`` and ``kind``), then a line of column names, then one row
per record with values written at 17 significant digits, which round-trips
IEEE doubles exactly. Headers are written with sorted JSON keys so equal
objects give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BayesOCError
from .shape import (AltShapePosterior, NullShapePosterior, QuantileGrid, QuantileMatrix,
                    QuantileRow, RegressionDraws, Stage1Entry, Stage1Posterior)
from .trial import Scenario, TauSample

SCHEMA_VERSION = 1


class StoreError(BayesOCError, OSError):
    """Unreadable, malformed or incompatible file."""


def _fmt(x) -> str:
    return "%.17g" % x


def write_columnar(path, kind: str, header: dict, columns: dict) -> Path:
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[c], dtype=float).ravel() for c in names]
    lengths = {a.size for a in arrays}
    if len(lengths) > 1:
        raise StoreError("columns must have equal length")
    lines = [f"# schema_version: {SCHEMA_VERSION}", f"# kind: {json.dumps(kind)}"]
    for key in sorted(header):
        lines.append(f"# {key}: {json.dumps(header[key], sort_keys=True)}")
    lines.append(" ".join(names))
    if arrays:
        for row in zip(*arrays):
            lines.append(" ".join(_fmt(v) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def read_columnar(path, kind: Optional[str] = None):
    """Return ``(header, columns)``; ``header`` includes ``kind`` and ``schema_version``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc}") from exc
    header, body = {}, []
    lines = text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].strip().partition(":")
        try:
            header[key.strip()] = json.loads(val)
        except json.JSONDecodeError as exc:
            raise StoreError(f"{path}: bad header line {i + 1}") from exc
        i += 1
    if header.get("schema_version") != SCHEMA_VERSION:
        raise StoreError(f"{path}: unsupported schema version {header.get('schema_version')}")
    if kind is not None and header.get("kind") != kind:
        raise StoreError(f"{path}: expected a {kind} file, found {header.get('kind')}")
    if i >= len(lines):
        raise StoreError(f"{path}: missing column row")
    names = lines[i].split()
    body = [ln for ln in lines[i + 1:] if ln.strip()]
    try:
        data = np.array([[float(v) for v in ln.split()] for ln in body], dtype=float)
    except ValueError as exc:
        raise StoreError(f"{path}: non-numeric value") from exc
    data = data.reshape(len(body), len(names))
    return header, {name: data[:, j].copy() for j, name in enumerate(names)}


# ---------------------------------------------------------------- tau samples

def write_tau_sample(sample: TauSample, path) -> Path:
    return write_columnar(path, "tau-sample", {"scenario": sample.scenario.to_dict(),
                                               "meta": sample.meta}, {"tau": sample.taus})


def read_tau_sample(path) -> TauSample:
    header, cols = read_columnar(path, "tau-sample")
    return TauSample(Scenario.from_dict(header["scenario"]), cols["tau"], header.get("meta", {}))


# ---------------------------------------------------------------- quantile matrix

def write_quantile_matrix(qm: QuantileMatrix, path) -> Path:
    cols = {"n": [r.n for r in qm.rows], "delta": [r.delta for r in qm.rows]}
    for j in range(qm.J):
        cols[f"q{j}"] = [r.q[j] for r in qm.rows]
    for j in range(qm.J):
        cols[f"v{j}"] = [np.nan if r.q_var is None else r.q_var[j] for r in qm.rows]
    return write_columnar(path, "quantile-matrix",
                          {"probs": list(qm.grid.probs), "keys": [r.key for r in qm.rows]}, cols)


def read_quantile_matrix(path) -> QuantileMatrix:
    header, cols = read_columnar(path, "quantile-matrix")
    grid = QuantileGrid(tuple(header["probs"]))
    J = len(grid.probs)
    rows = []
    for d, key in enumerate(header["keys"]):
        q = np.array([cols[f"q{j}"][d] for j in range(J)])
        v = np.array([cols[f"v{j}"][d] for j in range(J)])
        rows.append(QuantileRow(key, int(cols["n"][d]), float(cols["delta"][d]), q,
                                None if np.all(np.isnan(v)) else v))
    return QuantileMatrix(tuple(rows), grid)


# ---------------------------------------------------------------- posteriors

def write_stage1(post: Stage1Posterior, path) -> Path:
    entries = [{"key": e.key, "n": e.n, "delta": e.delta, "hypothesis": e.hypothesis,
                "rhat": e.rhat.tolist(), "ess": e.ess.tolist(), "converged": e.converged,
                "rows": int(e.draws.shape[0])} for e in post.entries]
    dim = post.entries[0].draws.shape[1] if post.entries else 1
    stacked = np.vstack([e.draws for e in post.entries]) if post.entries else np.empty((0, dim))
    cols = {"log_a": stacked[:, 0]}
    if dim == 2:
        cols["log_b"] = stacked[:, 1]
    return write_columnar(path, "stage1-posterior", {"sigma_eps": post.sigma_eps,
                                                     "asymmetric": post.asymmetric,
                                                     "entries": entries}, cols)


def read_stage1(path) -> Stage1Posterior:
    header, cols = read_columnar(path, "stage1-posterior")
    draws = np.column_stack([cols[c] for c in ("log_a", "log_b") if c in cols])
    out, start = [], 0
    for e in header["entries"]:
        block = draws[start:start + e["rows"]]
        start += e["rows"]
        out.append(Stage1Entry(e["key"], e["n"], e["delta"], e["hypothesis"], block,
                               np.asarray(e["rhat"]), np.asarray(e["ess"]), e["converged"]))
    return Stage1Posterior(tuple(out), header["sigma_eps"], header["asymmetric"])


def write_null_posterior(post: NullShapePosterior, path) -> Path:
    cols = {"alpha1": post.alpha1, "alpha2": post.alpha2, "sigma0": post.sigma0}
    header = {"rhat": post.rhat.tolist(), "ess": post.ess.tolist(), "n_values": list(post.n_values)}
    if post.second is not None:
        s = post.second
        cols.update({"alpha1_b": s.c1, "alpha2_b": s.c2, "sigma0_b": s.sigma})
        header["second"] = {"rhat": s.rhat.tolist(), "ess": s.ess.tolist()}
    return write_columnar(path, "null-shape-posterior", header, cols)


def read_null_posterior(path) -> NullShapePosterior:
    h, c = read_columnar(path, "null-shape-posterior")
    second = None
    if "second" in h:
        second = RegressionDraws(c["alpha1_b"], c["alpha2_b"], c["sigma0_b"],
                                 np.asarray(h["second"]["rhat"]), np.asarray(h["second"]["ess"]))
    return NullShapePosterior(c["alpha1"], c["alpha2"], c["sigma0"], np.asarray(h["rhat"]),
                              np.asarray(h["ess"]), tuple(h["n_values"]), second)


def write_alt_posterior(post: AltShapePosterior, path) -> Path:
    return write_columnar(path, "alt-shape-posterior",
                          {"rhat": post.rhat.tolist(), "ess": post.ess.tolist(),
                           "delta_values": list(post.delta_values), "psi0": post.psi0,
                           "direction": post.direction},
                          {"phi1": post.phi1, "phi2": post.phi2, "sigma1": post.sigma1})


def read_alt_posterior(path) -> AltShapePosterior:
    h, c = read_columnar(path, "alt-shape-posterior")
    return AltShapePosterior(c["phi1"], c["phi2"], c["sigma1"], np.asarray(h["rhat"]),
                             np.asarray(h["ess"]), tuple(h["delta_values"]), h["psi0"], h["direction"])


# ---------------------------------------------------------------- manifest

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, files, extra: Optional[dict] = None) -> Path:
    """``manifest.json`` with a SHA-256 per output file (paths relative to ``out_dir``)."""
    out_dir = Path(out_dir)
    entries = {str(Path(f).relative_to(out_dir)): file_digest(f) for f in sorted(map(Path, files))}
    doc = {"schema_version": SCHEMA_VERSION, "files": entries}
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
