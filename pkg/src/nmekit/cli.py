"""Command-line entry points: fit, cv, sweep, simulate.

Every command is seeded and deterministic; each output artifact embeds a
manifest recording the command, resolved arguments, input digests, seed,
package version, and wall-clock duration (the manifest is provenance; the
"result" section is the reproducible part).

Defaults for --seed, --max-features, --restarts, --folds, and --jobs can be
overridden with environment variables NMEKIT_SEED, NMEKIT_MAX_FEATURES,
NMEKIT_RESTARTS, NMEKIT_FOLDS, and NMEKIT_JOBS.

Exit codes: 0 success (non-convergence only warns), 2 configuration or data
error, 3 fit failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from . import __version__
from .data import TARGET_CHOICES, load_csv, write_csv
from .errors import ConfigError, DataError, NmekitError
from .metrics import aic_bic
from .pipeline import FAMILY_CHOICES, ModelSpec, fit_pipeline, save_model
from .simulate import SimConfig, generate
from .sweep import SWEEP_COLUMNS, SweepSpec, derive_seed, run_cv, sweep

logger = logging.getLogger(__name__)

ENV_PREFIX = "NMEKIT_"


def _env(name, fallback, cast):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"environment variable {ENV_PREFIX}{name}={raw!r} is not valid") from None


def _normalize_target(value):
    target = value.strip().replace("-", "_")
    if target not in TARGET_CHOICES:
        raise ConfigError(f"unknown target {value!r}; expected one of {TARGET_CHOICES}")
    return target


def _parse_theta(value):
    if value == "free":
        return "free"
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"--theta must be 'free' or a number, got {value!r}") from None


def _split_list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command, args, inputs, seed, t0):
    arguments = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose") and v is not None
    }
    return {
        "command": command,
        "arguments": arguments,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "started_utc": datetime.now(timezone.utc).isoformat(),
        "duration_seconds": round(time.monotonic() - t0, 3),
    }


def _model_spec(args, target):
    return ModelSpec(
        family=args.model,
        target=target,
        n_groups=args.groups,
        theta=_parse_theta(args.theta),
        inflation=args.inflation,
        max_features=args.max_features,
        seed=args.seed,
        n_restarts=args.restarts,
    )


def _with_suffix(base, suffix):
    return base if base.endswith(suffix) else base + suffix


def cmd_fit(args):
    t0 = time.monotonic()
    table = load_csv(args.input)
    target = _normalize_target(args.target)
    spec = _model_spec(args, target)
    fitted = fit_pipeline(table, spec)
    aic, bic = aic_bic(fitted.loglik, fitted.n_params, table.n_rows)
    logger.info(
        "fit %s on %s: loglik=%.4f params=%d AIC=%.2f BIC=%.2f converged=%s",
        spec.family,
        target,
        fitted.loglik,
        fitted.n_params,
        aic,
        bic,
        fitted.converged,
    )
    out = _with_suffix(args.out, ".json")
    manifest = build_manifest("fit", args, [args.input], args.seed, t0)
    save_model(fitted, out, manifest=manifest)
    logger.info("wrote %s", out)
    return 0


def cmd_cv(args):
    t0 = time.monotonic()
    table = load_csv(args.input)
    target = _normalize_target(args.target)
    spec = _model_spec(args, target)
    report = run_cv(table, spec, k=args.folds)
    logger.info(
        "cv %s on %s: AIC=%.2f deviance=%.4f+-%.4f rmse=%.4f+-%.4f status=%s",
        spec.family,
        target,
        report.aic,
        report.deviance_mean,
        report.deviance_std,
        report.rmse_mean,
        report.rmse_std,
        report.status,
    )
    manifest = build_manifest("cv", args, [args.input], args.seed, t0)
    base = args.out[:-5] if args.out.endswith(".json") else args.out
    with open(base + ".json", "w") as fh:
        json.dump(
            {"manifest": manifest, "result": {"spec": spec.to_dict(), "report": report.to_dict()}},
            fh,
            indent=2,
            default=float,
        )
    row = {
        "target": target,
        "family": spec.family,
        "G": spec.n_groups,
        "theta": "" if spec.theta == "free" else repr(spec.theta),
        "aic": report.aic,
        "bic": report.bic,
        "loglik": report.loglik,
        "n_params": report.n_params,
        "dev_mean": report.deviance_mean,
        "dev_std": report.deviance_std,
        "rmse_mean": report.rmse_mean,
        "rmse_std": report.rmse_std,
        "chi2": report.pearson_chi2,
        "mcfadden": report.mcfadden_r2,
        "brier": report.brier_zero,
        "status": report.status,
    }
    pd.DataFrame([row], columns=SWEEP_COLUMNS).to_csv(base + ".csv", index=False)
    logger.info("wrote %s.json and %s.csv", base, base)
    return 0


def cmd_sweep(args):
    t0 = time.monotonic()
    table = load_csv(args.input)
    targets = [_normalize_target(t) for t in _split_list(args.targets)]
    theta_grid = []
    for v in _split_list(args.theta_grid):
        theta_grid.append("free" if v == "free" else float(v))
    sspec = SweepSpec(
        targets=targets,
        families=_split_list(args.families),
        g_list=[int(g) for g in _split_list(args.g_list)],
        theta_grid=theta_grid,
        k=args.folds,
        seed=args.seed,
        max_features=args.max_features,
        inflation=args.inflation,
        n_restarts=args.restarts,
    )
    base = args.out[:-4] if args.out.endswith(".csv") else args.out
    csv_path = base + ".csv"
    df = sweep(table, sspec, out_csv=csv_path, resume=args.resume, jobs=args.jobs)
    manifest = build_manifest("sweep", args, [args.input], args.seed, t0)
    rows = []
    for rec in df.to_dict("records"):
        rows.append(
            {
                k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in rec.items()
            }
        )
    with open(base + ".json", "w") as fh:
        json.dump(
            {"manifest": manifest, "result": {"spec": sspec.to_dict(), "rows": rows}},
            fh,
            indent=2,
            default=float,
        )
    n_err = int(df["status"].astype(str).str.startswith("error").sum())
    logger.info("sweep wrote %s (%d rows, %d errors) and %s.json", csv_path, len(df), n_err, base)
    return 0


def cmd_simulate(args):
    t0 = time.monotonic()
    with open(args.config) as fh:
        config = SimConfig.from_dict(json.load(fh))
    if args.seed is not None:
        config.seed = args.seed
    table, labels = generate(config)
    base = args.out[:-4] if args.out.endswith(".csv") else args.out
    write_csv(table, base + ".csv")
    manifest = build_manifest("simulate", args, [args.config], config.seed, t0)
    with open(base + ".truth.json", "w") as fh:
        json.dump(
            {"manifest": manifest, "result": {"config": config.to_dict(), "labels": labels}},
            fh,
            indent=2,
        )
    logger.info(
        "simulated %d drivers / %d rows into %s.csv (+ truth sidecar)",
        config.n_drivers,
        table.n_rows,
        base,
    )
    return 0


def _add_fit_flags(p, with_model=True):
    p.add_argument("--input", required=True, help="driver-week CSV")
    p.add_argument("--target", required=True, help="event name or nme-total")
    if with_model:
        p.add_argument("--model", required=True, choices=FAMILY_CHOICES)
        p.add_argument("--groups", type=int, default=1, help="latent groups (gzip/gzigp)")
        p.add_argument("--theta", default="free", help="'free' or a fixed value in (-1, 1)")
        p.add_argument(
            "--inflation", choices=("intercept", "full"), default="intercept",
            help="structural-zero model: intercept-only or with covariates",
        )
    p.add_argument(
        "--max-features", type=int, default=_env("MAX_FEATURES", 10, int),
        help="correlation-filter cap (default 10)",
    )
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument(
        "--restarts", type=int, default=_env("RESTARTS", 3, int), help="EM restarts"
    )
    p.add_argument("--out", required=True, help="output path")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nmekit",
        description="Count-regression toolkit for weekly near-miss telematics data",
        epilog="Environment overrides: NMEKIT_SEED, NMEKIT_MAX_FEATURES, "
        "NMEKIT_RESTARTS, NMEKIT_FOLDS, NMEKIT_JOBS.",
    )
    parser.add_argument("--version", action="version", version=f"nmekit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model and write a model JSON")
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="stratified grouped K-fold evaluation of one model")
    _add_fit_flags(p_cv)
    p_cv.add_argument("--folds", type=int, default=_env("FOLDS", 5, int))
    p_cv.set_defaults(func=cmd_cv)

    p_sweep = sub.add_parser("sweep", help="grid sweep over targets, families, G, and theta")
    p_sweep.add_argument("--input", required=True)
    p_sweep.add_argument("--targets", required=True, help="comma-separated targets")
    p_sweep.add_argument(
        "--families", default="poisson,zip,gzip,gzigp", help="comma-separated families"
    )
    p_sweep.add_argument("--g-list", default="1,2,3,4", help="comma-separated group counts")
    p_sweep.add_argument(
        "--theta-grid", default="0.0", help="comma-separated fixed theta values (or 'free')"
    )
    p_sweep.add_argument("--folds", type=int, default=_env("FOLDS", 5, int))
    p_sweep.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p_sweep.add_argument("--max-features", type=int, default=_env("MAX_FEATURES", 10, int))
    p_sweep.add_argument("--inflation", choices=("intercept", "full"), default="intercept")
    p_sweep.add_argument("--restarts", type=int, default=_env("RESTARTS", 3, int))
    p_sweep.add_argument("--jobs", type=int, default=_env("JOBS", 1, int))
    p_sweep.add_argument(
        "--resume", action="store_true", help="keep completed cells from an existing output CSV"
    )
    p_sweep.add_argument("--out", required=True, help="output base path (.csv/.json)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_sim = sub.add_parser("simulate", help="draw a synthetic table from a config JSON")
    p_sim.add_argument("--config", required=True, help="SimConfig JSON")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.add_argument("--out", required=True, help="output base path")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, IsADirectoryError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NmekitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 3
    except (FloatingPointError, OverflowError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
