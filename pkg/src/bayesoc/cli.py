"""``bayesoc`` command line.

Subcommands: simulate, fit, oc, ssd, validate. Exit codes: 0 success,
2 configuration/schema error, 3 insufficient design, 4 diagnostics failure
(stage-2 R-hat above threshold, or a failed validation), 5 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigurationError, InsufficientDesignError, UnreachableTargetError
from .pipeline import (default_suites, fit_samples, load_models, load_simulation, oc_reports,
                       sample_size_report, simulate, validate, write_fit)
from .store import StoreError

EXIT_OK, EXIT_SCHEMA, EXIT_DESIGN, EXIT_DIAG, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("bayesoc")


def _config(args):
    if not args.config:
        raise ConfigurationError("--config is required for this command")
    return load_config(args.config, seed=args.seed, out=args.out)


def _out_dir(args, cfg=None) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.io.out if cfg is not None else "out")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    pairs = simulate(cfg, out, threads=args.threads)
    print(f"simulated {len(pairs)} scenarios -> {out / 'manifest.json'}")
    return EXIT_OK


def _run_dir(args) -> Path:
    if args.manifest:
        p = Path(args.manifest)
        return p.parent if p.name == "manifest.json" else p
    if not args.out and args.config:
        return _out_dir(args, _config(args))
    return _out_dir(args)


def cmd_fit(args) -> int:
    run = _run_dir(args)
    cfg, pairs = load_simulation(run)
    if args.config:
        # fit settings may be revised without re-simulating
        cfg = cfg.model_copy(update={"fit": _config(args).fit})
    train = [s for s, role in pairs if role == "train"]
    fit = fit_samples(train, cfg, threads=args.threads)
    write_fit(fit, run / "fit")
    diag = fit.diagnostics()
    print(json.dumps(diag, indent=2, sort_keys=True))
    if fit.stage1.flagged:
        log.warning("stage-1 rows flagged as unconverged: %s", ", ".join(fit.stage1.flagged))
    if not fit.converged:
        print("stage-2 R-hat above 1.05", file=sys.stderr)
        return EXIT_DIAG
    return EXIT_OK


def _oc_config(args, run: Path):
    if args.config:
        return _config(args)
    cfg, _ = load_simulation(run)
    return cfg


def cmd_oc(args) -> int:
    run = _run_dir(args)
    cfg = _oc_config(args, run)
    null, alt = load_models(run / "fit")
    files = oc_reports(null, alt, cfg, run / "oc")
    for f in files:
        print(f)
    return EXIT_OK


def cmd_ssd(args) -> int:
    run = _run_dir(args)
    cfg = _oc_config(args, run)
    _, alt = load_models(run / "fit")
    if alt is None:
        raise InsufficientDesignError("no fitted alternative model in this run")
    for row in sample_size_report(alt, cfg, run / "oc"):
        print(f"{row['prior']}: u={row['u']} n={row['n']} assurance={row['median']:.4f} "
              f"[{row['lo']:.4f}, {row['hi']:.4f}]")
    return EXIT_OK


def cmd_validate(args) -> int:
    suites = [_config(args)] if args.config else default_suites(args.seed)
    all_rows = []
    for cfg in suites:
        all_rows += validate(cfg, threads=args.threads)
    held = [r for r in all_rows if r["role"] == "test"]
    print(f"{'kind':6} {'n':>6} {'model':>8} {'exact':>8} {'diff':>8}  result")
    for r in held:
        print(f"{r['kind']:6} {r['n']:>6} {r['model']:8.4f} {r['exact']:8.4f} {r['diff']:+8.4f}  "
              f"{'PASS' if r['pass'] else 'FAIL'}")
    for kind in ("type1", "power"):
        rows = [r for r in held if r["kind"] == kind]
        if rows:
            worst = max(abs(r["diff"]) for r in rows)
            print(f"{kind}: max |diff| {worst:.4f} (tolerance {rows[0]['tol']})")
    power_rows = [r for r in held if r["kind"] == "power"]
    if power_rows:
        ns = sorted({r["n"] for r in power_rows})
        small = [r["diff"] for r in power_rows if r["n"] <= ns[len(ns) // 2]]
        large = [r["diff"] for r in power_rows if r["n"] > ns[len(ns) // 2]]
        if small and large:
            print(f"mean power bias: smaller n {sum(small) / len(small):+.4f}, "
                  f"larger n {sum(large) / len(large):+.4f}")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "validate.json").write_text(json.dumps(all_rows, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(r["pass"] for r in held) else EXIT_DIAG


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory (overrides io.out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="bayesoc", parents=[common],
                                     description="Operating characteristics of Bayesian trial designs "
                                                 "from beta-mixture models of simulated posterior probabilities.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate tau samples for every scenario")
    for name, fn_help in (("fit", "two-stage shape-model fit"), ("oc", "OC tables and plots"),
                          ("ssd", "sample size for an assurance target")):
        p = sub.add_parser(name, parents=[common], help=fn_help)
        p.add_argument("manifest", nargs="?", help="manifest.json or run directory (default: --out)")
    sub.add_parser("validate", parents=[common], help="compare held-out OCs with the exact conjugate oracle")
    return parser


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "oc": cmd_oc, "ssd": cmd_ssd, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "manifest"):
        args.manifest = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (InsufficientDesignError, UnreachableTargetError) as exc:
        print(f"design error: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    except (StoreError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
