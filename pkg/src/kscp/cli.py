"""Command line entry point: ``kscp <verb> [options]``.

Exit status: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .conformal import CalibratedPredictor, calibrate
from .data import Dataset, DataSplits, Standardizer, load_csv, read_column
from .evaluate import WslabConfig, subgroup_report, summarize, write_reports
from .experiment import (
    ConfigError,
    _Trainer,
    build_config,
    config_to_ini,
    fit_cde,
    load_dataset,
    make_splits,
    read_config,
    run,
    sweep_alpha,
    sweep_ablate,
)
from .models import DivergenceError

log = logging.getLogger("kscp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# flag -> (section, key)
FLAG_KEYS = {
    "dataset": ("experiment", "dataset"),
    "csv": ("experiment", "csv_path"),
    "target": ("experiment", "target"),
    "methods": ("experiment", "methods"),
    "kinds": ("experiment", "kinds"),
    "alphas": ("experiment", "alphas"),
    "seeds": ("experiment", "seeds"),
    "n_train": ("experiment", "n_train"),
    "n_calib": ("experiment", "n_calib"),
    "n_test": ("experiment", "n_test"),
    "family": ("model", "family"),
    "lam": ("ks", "lam"),
    "gamma": ("ks", "gamma"),
    "epochs": ("ks", "epochs"),
    "cde": ("cde", "backend"),
    "out_dir": ("output", "out_dir"),
    "jobs": ("output", "jobs"),
    "lambdas": ("sweep", "lambdas"),
    "gammas": ("sweep", "gammas"),
    "grid": ("sweep", "alphas"),
}


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment file (see docs/config.md)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--seed", type=int, action="append", help="run this seed (repeatable; replaces seeds)")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for independent seeds")
    p.add_argument("--dataset", help="setting-one, setting-two or csv")
    p.add_argument("--csv", help="CSV file (implies --dataset csv)")
    p.add_argument("--target", help="target column of the CSV file")
    p.add_argument("--no-standardize", action="store_true", help="fit on raw CSV units")
    p.add_argument("--methods", help="subset of CP, KS-CP, OQR, COQR, CDE")
    p.add_argument("--kinds", help="subset of residual, normalized, quantile")
    p.add_argument("--alphas", help="miscoverage levels")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-calib", dest="n_calib", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--family", help="linear or mlp")
    p.add_argument("--lam", type=float, help="KS penalty weight")
    p.add_argument("--gamma", type=float, help="sigmoid temperature")
    p.add_argument("--epochs", type=int, help="KS epochs after the warm start")
    p.add_argument("--cde", help="density backend: mdn or nw")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kscp", description="Conformal prediction with KS-regularized training.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="train, calibrate and evaluate every configured cell")
    _experiment_args(p)

    p = sub.add_parser("sweep-alpha", help="coverage across miscoverage levels from one fit per method")
    _experiment_args(p)
    p.add_argument("--grid", help="alpha grid (default: [sweep] alphas)")

    p = sub.add_parser("sweep-ablate", help="KS-CP over a lambda x gamma grid")
    _experiment_args(p)
    p.add_argument("--lambdas", help="lambda grid")
    p.add_argument("--gammas", help="gamma grid")

    p = sub.add_parser("audit", help="metrics of a saved predictor on a CSV file")
    p.add_argument("--predictor", required=True, help="predictor JSON from 'checkpoint save'")
    p.add_argument("--csv", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--subgroup", help="0/1 column marking a subgroup (excluded from features)")
    p.add_argument("--standardizer", help="standardizer JSON applied before prediction")
    p.add_argument("--setting", help="synthetic setting name, enables analytic conditional coverage")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--n-dirs", dest="n_dirs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0, help="seed for slab directions")
    p.add_argument("--out-dir", dest="out_dir", help="also write audit.csv (and subgroup.json) here")

    p = sub.add_parser("checkpoint", help="save a trained predictor or inspect a saved one")
    csub = p.add_subparsers(dest="action", required=True)
    s = csub.add_parser("save", help="train one (method, kind) cell and save the predictor")
    _experiment_args(s)
    s.add_argument("--method", default="KS-CP", choices=("CP", "KS-CP", "COQR"))
    s.add_argument("--kind", default="residual", choices=("residual", "normalized", "quantile"))
    s.add_argument("--alpha", type=float, help="miscoverage level (default: first configured)")
    s.add_argument("--out", required=True, help="predictor JSON path")
    s = csub.add_parser("load", help="validate a predictor file and print its summary")
    s.add_argument("path")
    return ap


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        lhs, val = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        ov[(sec.strip(), key.strip())] = val.strip()
    for flag, sk in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            ov[sk] = val
    if getattr(args, "csv", None):
        ov[("experiment", "dataset")] = "csv"
    if args.seed:
        ov[("experiment", "seeds")] = ",".join(str(s) for s in args.seed)
    if args.no_standardize:
        ov[("experiment", "standardize")] = "false"
    if args.plots:
        ov[("output", "plots")] = "true"
    return ov


def _config(args):
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    raw = read_config(Path(args.config).read_text() if args.config else "", _overrides(args))
    cfg = build_config(raw)
    try:
        load_dataset(cfg)
    except (OSError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return cfg, raw


def _finish(outcome, out_dir: Path, what: str) -> int:
    if outcome.error is not None:
        log.error("%s failed: %s (partial results kept in %s)", what, outcome.error, out_dir)
        return EXIT_RUNTIME
    print(f"{what}: wrote results to {out_dir}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg, raw = _config(args)
    if args.dry_run:
        sys.stdout.write(config_to_ini(raw))
        return EXIT_OK
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config_to_ini(raw))
    if args.verb == "run":
        outcome = run(cfg, out)
        if outcome.error is None:
            for row in outcome.aggregate:
                print(f"{row['method']:>6} {row['kind']:>10} a={row['alpha']:<5} mc={row['mc']} cc={row['cc']} "
                      f"wslab={row['wslab']} size={row['mean_set_size']} mse={row['mse']}")
    elif args.verb == "sweep-alpha":
        outcome = sweep_alpha(cfg, out)
    else:
        outcome = sweep_ablate(cfg, out)
    return _finish(outcome, out, args.verb)


def cmd_checkpoint(args) -> int:
    if args.action == "load":
        path = Path(args.path)
        if not path.is_file():
            raise ConfigError(f"no such predictor file: {path}")
        try:
            pred = CalibratedPredictor.load(path)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from None
        info = {"method": pred.method, "kind": pred.kind, "alpha": pred.alpha, "q_star": pred.q_star,
                "n_calib": pred.n_calib, "rule": pred.rule, "model": pred.model.spec.to_dict(),
                "cde": None if pred.cde is None else type(pred.cde).__name__}
        print(json.dumps(info, indent=1))
        return EXIT_OK
    cfg, _ = _config(args)
    seed = cfg.seeds[0]
    alpha = args.alpha if args.alpha is not None else cfg.alphas[0]
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if args.method == "COQR" and args.kind != "quantile":
        raise ConfigError("COQR uses the quantile score")
    splits, scaler = make_splits(cfg, seed)
    needs = args.kind == "normalized" or (args.method == "KS-CP" and cfg.ks.lam > 0)
    cde = fit_cde(cfg, splits.train, seed) if needs else None
    tr = _Trainer(cfg, splits, cde, seed)
    if args.method == "CP":
        pred = tr.cp(args.kind, alpha)
    elif args.method == "KS-CP":
        pred = tr.kscp(args.kind, alpha)[0]
    else:
        pred = calibrate(tr.oqr_model(alpha), "quantile", splits.calib, alpha, rule=cfg.rule, method="COQR")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pred.save(out)
    if scaler is not None:
        out.with_suffix(".standardizer.json").write_text(json.dumps(scaler.to_dict(), indent=1))
    print(f"saved {pred.method}/{pred.kind} predictor (q*={pred.q_star:.4g}) to {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        pred = CalibratedPredictor.load(args.predictor)
        drop = (args.subgroup,) if args.subgroup else ()
        ds = load_csv(args.csv, args.target, drop=drop)
        mask = read_column(args.csv, args.subgroup).astype(bool) if args.subgroup else None
        scaler = Standardizer.from_dict(json.loads(Path(args.standardizer).read_text())) if args.standardizer else None
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise ConfigError(str(e)) from None
    if ds.d != pred.model.spec.input_dim:
        raise ConfigError(f"CSV has {ds.d} features, predictor expects {pred.model.spec.input_dim}")
    if scaler is not None:
        ds = scaler.transform(ds)
    empty = Dataset(np.zeros((0, ds.d)), np.zeros(0))
    splits = DataSplits(empty, empty, ds)
    wc = WslabConfig(args.delta, args.n_dirs if args.delta * ds.n >= 20 else 0, args.seed)
    rep = summarize(pred, splits, args.setting, wc, dataset=Path(args.csv).name, seed=args.seed)
    if scaler is not None:
        rep.mean_set_size *= scaler.y_std
        if rep.mse is not None:
            rep.mse *= scaler.y_std ** 2
    result = rep.row()
    if mask is not None:
        result["subgroup"] = subgroup_report(pred, ds, mask)
    print(json.dumps(result, indent=1, default=float))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_reports(out / "audit.csv", [rep])
        if mask is not None:
            (out / "subgroup.json").write_text(json.dumps(result["subgroup"], indent=1))
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.verb in ("run", "sweep-alpha", "sweep-ablate"):
            return cmd_experiment(args)
        if args.verb == "checkpoint":
            return cmd_checkpoint(args)
        return cmd_audit(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteError, ArithmeticError, RuntimeError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
