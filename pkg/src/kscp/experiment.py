"""Experiment grid runner: configuration, per-seed jobs, aggregation, file output.

Configuration files are INI-style: ``[section]`` headers followed by
``key = value`` lines, ``#`` or ``;`` comments, lists comma-separated. Every
key has a default (see :data:`DEFAULTS`); unknown sections or keys are
rejected. The full grammar is documented in ``docs/config.md``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import svg
from .cde import default_mdn_optimizer, fit_mdn, fit_nw
from .conformal import FixedBandPredictor, GenerativePredictor, calibrate, coverage_band
from .data import GENERATORS, MEANS, Dataset, DataSplits, load_csv, split, split_fractions, standardize
from .evaluate import (
    SCHEMA_VERSION,
    MetricsReport,
    WslabConfig,
    analytic_coverage,
    cc_grid,
    summarize,
    write_reports,
)
from .ksreg import KSConfig, OQRConfig, regularizer_residual, train_kscp, train_oqr, warm_start
from .models import ModelSpec

METHODS = ("CP", "KS-CP", "OQR", "COQR", "CDE")
CONFORMAL = ("CP", "KS-CP", "COQR")
METRICS = ("mc", "cc", "wslab", "mean_set_size", "mse", "reg_residual", "empty_frac")

DEFAULTS = {
    "experiment": {
        "dataset": "setting-one",
        "csv_path": "",
        "target": "y",
        "standardize": "true",
        "n_train": "2000",
        "n_calib": "1000",
        "n_test": "10000",
        "train_frac": "0.5",
        "calib_frac": "0.25",
        "methods": "CP, KS-CP",
        "kinds": "residual",
        "alphas": "0.1",
        "seeds": "0, 1, 2, 3, 4",
        "rule": "ceil",
        "band_tol": "0.01",
    },
    "model": {"family": "linear", "hidden": "64, 64", "slope": "0.01"},
    "ks": {
        "lam": "1000",
        "gamma": "10",
        "n_t": "128",
        "n_s": "100",
        "calib_batch": "256",
        "epochs": "60",
        "warm_epochs": "200",
        "warm_lr": "0.01",
        "lr": "0.05",
        "decay": "0.2",
        "batch_size": "256",
        "clip": "10",
        "refresh": "epoch",
    },
    "oqr": {"lam": "0.3", "gamma": "10", "lr": "0.01", "epochs": "300", "batch_size": "256"},
    "cde": {
        "backend": "mdn",
        "components": "5",
        "epochs": "200",
        "lr": "0.003",
        "batch_size": "256",
        "hidden": "64, 64",
        "h1": "",
        "h2": "",
        "n_samples": "1000",
    },
    "wslab": {"delta": "0.1", "n_dirs": "1000", "seed": "0"},
    "sweep": {
        "alphas": "0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5",
        "lambdas": "0.1, 1, 10, 100, 1000",
        "gammas": "10",
    },
    "output": {"out_dir": "results", "jobs": "1", "plots": "false", "dump_intervals": "true"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit status 2)."""


class BandCheckError(RuntimeError):
    """Mean marginal coverage of a conformal method fell outside its guaranteed band."""


@dataclass(frozen=True)
class CdeConfig:
    backend: str = "mdn"
    components: int = 5
    epochs: int = 200
    lr: float = 3e-3
    batch_size: int = 256
    hidden: tuple = (64, 64)
    h1: float | None = None
    h2: float | None = None
    n_samples: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "setting-one"
    csv_path: str = ""
    target: str = "y"
    standardize: bool = True
    n_train: int = 2000
    n_calib: int = 1000
    n_test: int = 10000
    train_frac: float = 0.5
    calib_frac: float = 0.25
    methods: tuple = ("CP", "KS-CP")
    kinds: tuple = ("residual",)
    alphas: tuple = (0.1,)
    seeds: tuple = (0, 1, 2, 3, 4)
    rule: str = "ceil"
    band_tol: float = 0.01
    family: str = "linear"
    hidden: tuple = (64, 64)
    slope: float = 0.01
    ks: KSConfig = field(default_factory=KSConfig)
    oqr: OQRConfig = field(default_factory=OQRConfig)
    cde: CdeConfig = field(default_factory=CdeConfig)
    wslab: WslabConfig = field(default_factory=WslabConfig)
    sweep_alphas: tuple = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    lambdas: tuple = (0.1, 1.0, 10.0, 100.0, 1000.0)
    gammas: tuple = (10.0,)
    out_dir: str = "results"
    jobs: int = 1
    plots: bool = False
    dump_intervals: bool = True

    @property
    def synthetic(self) -> bool:
        return self.dataset in GENERATORS

    @property
    def needs_cde(self) -> bool:
        return ("normalized" in self.kinds or "CDE" in self.methods
                or ("KS-CP" in self.methods and (self.ks.lam > 0 or max(self.lambdas) > 0)))

    def point_spec(self, d: int) -> ModelSpec:
        if self.family == "linear":
            return ModelSpec.linear(d)
        return ModelSpec.mlp(d, self.hidden, self.slope)

    def quantile_spec(self, d: int) -> ModelSpec:
        return ModelSpec.quantile(d, () if self.family == "linear" else self.hidden, self.slope)

    def spec_for(self, kind: str, d: int) -> ModelSpec:
        return self.quantile_spec(d) if kind == "quantile" else self.point_spec(d)


# parsing --------------------------------------------------------------------

def _list(text: str, conv) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    return tuple(conv(t) for t in items)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip() in ("", "none") else float(text)


def read_config(text: str = "", overrides: dict | None = None) -> dict:
    """Merge defaults, INI ``text`` and ``{(section, key): value}`` overrides into raw strings."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.read_dict(DEFAULTS)
    user = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        user.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    raw = {s: dict(parser[s]) for s in DEFAULTS}
    for sec in user.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, val in user[sec].items():
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            raw[sec][key] = val
    for (sec, key), val in (overrides or {}).items():
        if sec not in DEFAULTS or key not in DEFAULTS[sec]:
            raise ConfigError(f"unknown setting {sec}.{key}")
        raw[sec][key] = str(val)
    return raw


def build_config(raw: dict) -> ExperimentConfig:
    e, m, k, o, c, w, s, out = (raw[n] for n in ("experiment", "model", "ks", "oqr", "cde", "wslab", "sweep",
                                                 "output"))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ks = KSConfig(
                lam=float(k["lam"]), gamma=float(k["gamma"]), n_t=int(k["n_t"]), n_s=int(k["n_s"]),
                calib_batch=int(k["calib_batch"]), epochs=int(k["epochs"]), warm_epochs=int(k["warm_epochs"]),
                warm_lr=float(k["warm_lr"]), lr=float(k["lr"]), decay=float(k["decay"]),
                batch_size=int(k["batch_size"]), clip=_opt_float(k["clip"]), refresh=k["refresh"].strip())
        cfg = ExperimentConfig(
            dataset=e["dataset"].strip(),
            csv_path=e["csv_path"].strip(),
            target=e["target"].strip(),
            standardize=_bool(e["standardize"]),
            n_train=int(e["n_train"]),
            n_calib=int(e["n_calib"]),
            n_test=int(e["n_test"]),
            train_frac=float(e["train_frac"]),
            calib_frac=float(e["calib_frac"]),
            methods=_list(e["methods"], str),
            kinds=_list(e["kinds"], str),
            alphas=_list(e["alphas"], float),
            seeds=_list(e["seeds"], int),
            rule=e["rule"].strip(),
            band_tol=float(e["band_tol"]),
            family=m["family"].strip(),
            hidden=_list(m["hidden"], int),
            slope=float(m["slope"]),
            ks=ks,
            oqr=OQRConfig(lam=float(o["lam"]), gamma=float(o["gamma"]), lr=float(o["lr"]),
                          epochs=int(o["epochs"]), batch_size=int(o["batch_size"])),
            cde=CdeConfig(backend=c["backend"].strip(), components=int(c["components"]), epochs=int(c["epochs"]),
                          lr=float(c["lr"]), batch_size=int(c["batch_size"]), hidden=_list(c["hidden"], int),
                          h1=_opt_float(c["h1"]), h2=_opt_float(c["h2"]), n_samples=int(c["n_samples"])),
            wslab=WslabConfig(delta=float(w["delta"]), n_dirs=int(w["n_dirs"]), seed=int(w["seed"])),
            sweep_alphas=_list(s["alphas"], float),
            lambdas=_list(s["lambdas"], float),
            gammas=_list(s["gammas"], float),
            out_dir=out["out_dir"].strip(),
            jobs=int(out["jobs"]),
            plots=_bool(out["plots"]),
            dump_intervals=_bool(out["dump_intervals"]),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
    validate(cfg)
    return cfg


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    return build_config(read_config(text, overrides))


def validate(cfg: ExperimentConfig) -> None:
    def bad(msg):
        raise ConfigError(msg)

    if not cfg.methods:
        bad("methods list is empty")
    for mth in cfg.methods:
        if mth not in METHODS:
            bad(f"unknown method {mth!r}; expected some of {METHODS}")
    if not cfg.kinds and any(mth in cfg.methods for mth in ("CP", "KS-CP")):
        bad("kinds list is empty")
    for kind in cfg.kinds:
        if kind not in ("residual", "normalized", "quantile"):
            bad(f"unknown score kind {kind!r}")
    if not cfg.seeds:
        bad("seeds list is empty")
    if not cfg.alphas or any(not 0 < a < 1 for a in cfg.alphas):
        bad("alphas must be a nonempty list of values in (0, 1)")
    if any(not 0 < a < 1 for a in cfg.sweep_alphas):
        bad("sweep alphas must lie in (0, 1)")
    if any(lam < 0 for lam in cfg.lambdas) or any(g <= 0 for g in cfg.gammas):
        bad("sweep lambdas must be >= 0 and gammas > 0")
    if cfg.rule not in ("ceil", "floor"):
        bad("rule must be 'ceil' or 'floor'")
    if cfg.family not in ("linear", "mlp"):
        bad("model family must be 'linear' or 'mlp'")
    if cfg.family == "mlp" and (not cfg.hidden or min(cfg.hidden) < 1):
        bad("mlp needs positive hidden widths")
    if cfg.cde.backend not in ("mdn", "nw"):
        bad("cde backend must be 'mdn' or 'nw'")
    if cfg.cde.components < 1 or cfg.cde.n_samples < 2:
        bad("cde needs components >= 1 and n_samples >= 2")
    if cfg.jobs < 1:
        bad("jobs must be >= 1")
    if cfg.synthetic:
        if cfg.n_train < 2 or cfg.n_calib < 2 or cfg.n_test < 1:
            bad("need n_train >= 2, n_calib >= 2, n_test >= 1")
    elif cfg.dataset == "csv":
        if not cfg.csv_path:
            bad("dataset = csv requires csv_path")
        if not 0 < cfg.train_frac < 1 or not 0 < cfg.calib_frac < 1 or cfg.train_frac + cfg.calib_frac >= 1:
            bad("train_frac and calib_frac must be in (0, 1) and sum below 1")
    else:
        bad(f"unknown dataset {cfg.dataset!r}; use {tuple(GENERATORS)} or csv")
    if not 0 < cfg.wslab.delta <= 1 or cfg.wslab.n_dirs < 0:
        bad("wslab needs 0 < delta <= 1 and n_dirs >= 0")


def config_to_ini(cfg_raw: dict) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(cfg_raw)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# data -----------------------------------------------------------------------

def load_dataset(cfg: ExperimentConfig) -> Dataset | None:
    """The CSV table for csv configs (None for synthetic data, which is drawn per seed)."""
    if cfg.synthetic:
        return None
    return load_csv(cfg.csv_path, cfg.target)


def make_splits(cfg: ExperimentConfig, seed: int, table: Dataset | None = None):
    """(splits in model units, standardizer or None)."""
    if cfg.synthetic:
        ds = GENERATORS[cfg.dataset](cfg.n_train + cfg.n_calib + cfg.n_test, seed)
        return split(ds, cfg.n_train, cfg.n_calib, seed), None
    table = table if table is not None else load_dataset(cfg)
    sp = split_fractions(table, cfg.train_frac, cfg.calib_frac, seed)
    if sp.test.n == 0:
        raise ConfigError("the test split is empty; lower train_frac + calib_frac")
    if not cfg.standardize:
        return sp, None
    return standardize(sp)


def fit_cde(cfg: ExperimentConfig, train: Dataset, seed: int):
    c = cfg.cde
    if c.backend == "nw":
        return fit_nw(train, c.h1, c.h2)
    opt = default_mdn_optimizer(epochs=c.epochs, lr=c.lr, batch_size=c.batch_size, seed=seed)
    return fit_mdn(train, c.components, opt, hidden=c.hidden)


# per-seed job -----------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    reports: list
    logs: dict = field(default_factory=dict)
    dumps: dict = field(default_factory=dict)
    standardizer: dict | None = None


def _tag(method, kind, alpha, seed) -> str:
    return f"{method}_{kind}_a{alpha:g}_s{seed}"


def _history_rows(hist, start: int = 0) -> list:
    return [{"epoch": start + i, "loss": h} for i, h in enumerate(hist)]


def _dump(cfg, pred, splits, scaler):
    """Plot-ready interval table: analytic grid for synthetic data, test rows otherwise."""
    if cfg.synthetic and splits.test.d == 1:
        x = cc_grid()
        iv = pred.predict_interval(x[:, None])
        point = pred.point(x[:, None])
        cov = analytic_coverage(pred, cfg.dataset, x)
        rows = [{"x": float(a), "lo": float(lo), "hi": float(hi),
                 "point": "" if point is None else float(point[i]), "coverage": float(cv)}
                for i, (a, lo, hi, cv) in enumerate(zip(x, iv.lo, iv.hi, cov))]
        return rows
    test = splits.test
    iv = pred.predict_interval(test.x)
    cov = pred.covers(test.x, test.y)
    y, lo, hi = test.y, iv.lo, iv.hi
    if scaler is not None:
        y, lo, hi = (scaler.inverse_y(v) for v in (y, lo, hi))
    return [{"row": i, "y": float(a), "lo": float(b), "hi": float(c), "covered": int(d)}
            for i, (a, b, c, d) in enumerate(zip(y, lo, hi, cov))]


def _report(cfg, pred, splits, scaler, seed, cde, dataset_name):
    kind = getattr(pred, "kind", "NA")
    reg = None
    if cde is not None and kind != "NA":
        sigma = cde.cond_std(splits.calib.x) if kind == "normalized" else None
        reg = regularizer_residual(pred.model, kind, splits.calib, cde, cfg.ks.n_s, seed, sigma)
    rep = summarize(pred, splits, cfg.dataset if cfg.synthetic else None, cfg.wslab, dataset=dataset_name,
                    seed=seed, reg_residual=reg)
    if scaler is not None:
        rep.mean_set_size *= scaler.y_std
        if rep.mse is not None:
            rep.mse *= scaler.y_std ** 2
    return rep


def _dataset_name(cfg) -> str:
    return cfg.dataset if cfg.synthetic else Path(cfg.csv_path).name


class _Trainer:
    """Caches warm starts and KS-CP fits per (kind, level) within one seed."""

    def __init__(self, cfg: ExperimentConfig, splits: DataSplits, cde, seed: int):
        self.cfg, self.splits, self.cde, self.seed = cfg, splits, cde, seed
        self.warm: dict = {}
        self.ks: dict = {}

    def ks_config(self, alpha: float, **kw) -> KSConfig:
        return replace(self.cfg.ks, seed=self.seed, alpha=alpha, **kw)

    @staticmethod
    def key(kind, alpha):
        # pinball levels depend on alpha; the point fits do not
        return (kind, alpha if kind == "quantile" else None)

    def warm_model(self, kind, alpha):
        k = self.key(kind, alpha)
        if k not in self.warm:
            spec = self.cfg.spec_for(kind, self.splits.train.d)
            self.warm[k] = warm_start(spec, kind, self.splits.train, self.ks_config(alpha))
        return self.warm[k]

    def cp(self, kind, alpha):
        return calibrate(self.warm_model(kind, alpha), kind, self.splits.calib, alpha,
                         cde=self.cde if kind == "normalized" else None, rule=self.cfg.rule, method="CP")

    def kscp(self, kind, alpha, **kw):
        k = (*self.key(kind, alpha), tuple(sorted(kw.items())))
        if k not in self.ks:
            spec = self.cfg.spec_for(kind, self.splits.train.d)
            self.ks[k] = train_kscp(self.splits, spec, kind, self.ks_config(alpha, **kw), cde=self.cde,
                                    model=self.warm_model(kind, alpha), return_run=True)
        run = self.ks[k]
        pred = calibrate(run.predictor.model, kind, self.splits.calib, alpha,
                         cde=self.cde if kind == "normalized" else None, rule=self.cfg.rule, method="KS-CP")
        return pred, run.log

    def oqr_model(self, alpha):
        spec = self.cfg.quantile_spec(self.splits.train.d)
        return train_oqr(self.splits, spec, replace(self.cfg.oqr, seed=self.seed, alpha=alpha))


def run_seed(cfg: ExperimentConfig, seed: int, table: Dataset | None = None) -> SeedResult:
    splits, scaler = make_splits(cfg, seed, table)
    cde = fit_cde(cfg, splits.train, seed) if cfg.needs_cde else None
    res = SeedResult(seed, [], standardizer=None if scaler is None else scaler.to_dict())
    if cde is not None and getattr(cde, "history", None):
        res.logs[f"cde_s{seed}"] = _history_rows(cde.history)
    tr = _Trainer(cfg, splits, cde, seed)
    name = _dataset_name(cfg)

    def emit(pred, kind, alpha, log):
        tag = _tag(pred.method, kind, alpha, seed)
        res.reports.append(_report(cfg, pred, splits, scaler, seed, cde, name))
        if log is not None:
            res.logs[tag] = log
        if cfg.dump_intervals:
            res.dumps[tag] = _dump(cfg, pred, splits, scaler)

    for alpha in cfg.alphas:
        for kind in cfg.kinds:
            if "CP" in cfg.methods:
                pred = tr.cp(kind, alpha)
                emit(pred, kind, alpha, _history_rows(pred.model.history))
            if "KS-CP" in cfg.methods:
                pred, log = tr.kscp(kind, alpha)
                emit(pred, kind, alpha, log)
        if "OQR" in cfg.methods or "COQR" in cfg.methods:
            model = tr.oqr_model(alpha)
            if "OQR" in cfg.methods:
                emit(FixedBandPredictor(model, alpha), "quantile", alpha, _history_rows(model.history))
            if "COQR" in cfg.methods:
                pred = calibrate(model, "quantile", splits.calib, alpha, rule=cfg.rule, method="COQR")
                emit(pred, "quantile", alpha, None)
        if "CDE" in cfg.methods:
            emit(GenerativePredictor(cde, alpha, cfg.cde.n_samples, seed), "NA", alpha, None)
    return res


def _map_seeds(fn, cfg: ExperimentConfig, seeds, *args):
    """Ordered results; stops at the first failing seed, returning what finished before it."""
    done, error = [], None
    if cfg.jobs == 1 or len(seeds) == 1:
        for s in seeds:
            try:
                done.append(fn(cfg, s, *args))
            except Exception as e:  # noqa: BLE001 - re-raised by the caller after partial output
                error = e
                break
        return done, error
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        futures = [pool.submit(fn, cfg, s, *args) for s in seeds]
        for fut in futures:
            try:
                done.append(fut.result())
            except Exception as e:  # noqa: BLE001
                error = e
                break
    return done, error


# aggregation ------------------------------------------------------------------

def mean_std(values) -> str:
    """'0.90(0.01)' style: mean and (population) std over seeds, two decimals; NA when absent."""
    vals = [v for v in values if v is not None and v != ""]
    if not vals:
        return "NA"
    arr = np.asarray(vals, dtype=np.float64)
    if np.any(np.isinf(arr)):
        return "inf"
    return f"{arr.mean():.2f}({arr.std():.2f})"


AGG_COLUMNS = ["method", "kind", "dataset", "alpha", "n_seeds", *METRICS, "schema_version"]


def aggregate(reports) -> list[dict]:
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.method, r.kind, r.dataset, r.alpha), []).append(r)
    rows = []
    for (method, kind, dataset, alpha), rs in groups.items():
        row = {"method": method, "kind": kind, "dataset": dataset, "alpha": f"{alpha:g}", "n_seeds": len(rs)}
        for m in METRICS:
            row[m] = mean_std([getattr(r, m) for r in rs])
        row["schema_version"] = SCHEMA_VERSION
        rows.append(row)
    return rows


def band_tolerance(cfg: ExperimentConfig, alpha: float, n_calib: int, n_test: int, n_seeds: int) -> float:
    """``band_tol`` plus three standard errors of the seed-averaged coverage estimate."""
    var = alpha * (1 - alpha) * (1.0 / (n_calib + 2) + 1.0 / max(n_test, 1))
    return cfg.band_tol + 3.0 * math.sqrt(var / n_seeds)


def check_bands(cfg: ExperimentConfig, reports, n_calib: int, n_test: int) -> list[str]:
    """Messages for conformal (method, kind, alpha) groups whose mean MC misses the band."""
    groups: dict = {}
    for r in reports:
        if r.method in CONFORMAL:
            groups.setdefault((r.method, r.kind, r.alpha), []).append(r.mc)
    bad = []
    for (method, kind, alpha), mcs in groups.items():
        lo, hi = coverage_band(alpha, n_calib, band_tolerance(cfg, alpha, n_calib, n_test, len(mcs)))
        m = float(np.mean(mcs))
        if not lo <= m <= hi:
            bad.append(f"{method}/{kind} alpha={alpha:g}: mean coverage {m:.4f} outside [{lo:.4f}, {hi:.4f}]")
    return bad


# output -----------------------------------------------------------------------

def write_rows(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    if not rows:
        return
    columns = columns or list(rows[0])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _write_seed_outputs(out: Path, results: list[SeedResult]) -> None:
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "intervals").mkdir(parents=True, exist_ok=True)
    for res in results:
        for tag, rows in res.logs.items():
            write_rows(out / "logs" / f"{tag}.csv", rows)
        for tag, rows in res.dumps.items():
            write_rows(out / "intervals" / f"{tag}.csv", rows)
        if res.standardizer is not None:
            (out / f"standardizer_s{res.seed}.json").write_text(json.dumps(res.standardizer, indent=1))


def _split_sizes(cfg: ExperimentConfig, table: Dataset | None) -> tuple[int, int]:
    if cfg.synthetic:
        return cfg.n_calib, cfg.n_test
    n_tr = int(round(cfg.train_frac * table.n))
    n_ca = int(round(cfg.calib_frac * table.n))
    return n_ca, table.n - n_tr - n_ca


def _interval_plots(out: Path, results: list[SeedResult], cfg: ExperimentConfig) -> None:
    if not (cfg.synthetic and results):
        return
    (out / "plots").mkdir(exist_ok=True)
    res = results[0]
    for tag, rows in res.dumps.items():
        x = np.array([r["x"] for r in rows])
        lo = np.array([r["lo"] for r in rows])
        hi = np.array([r["hi"] for r in rows])
        cov = np.array([r["coverage"] for r in rows])
        ds = GENERATORS[cfg.dataset](400, 10_000 + res.seed)
        (out / "plots" / f"{tag}_band.svg").write_text(
            svg.band_plot(x, lo, hi, (ds.x[:, 0], ds.y), title=f"{tag}: prediction band"))
        (out / "plots" / f"{tag}_coverage.svg").write_text(
            svg.line_plot({"coverage": (x, cov)}, title=f"{tag}: conditional coverage", xlabel="x",
                          ylabel="P(Y in C(x) | x)"))


@dataclass
class RunOutcome:
    reports: list
    aggregate: list
    failures: list
    error: Exception | None = None


def run(cfg: ExperimentConfig, out_dir=None) -> RunOutcome:
    """Every (seed, alpha, kind, method) cell; writes reports, logs, dumps and the aggregate.

    The aggregate is only written after every conformal group passes its
    marginal coverage band. Per-seed rows computed before a failure are kept.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = load_dataset(cfg)
    results, error = _map_seeds(run_seed, cfg, list(cfg.seeds), table)
    reports = [r for res in results for r in res.reports]
    write_reports(out / "reports.csv", reports)
    _write_seed_outputs(out, results)
    if error is not None:
        return RunOutcome(reports, [], [], error)
    n_calib, n_test = _split_sizes(cfg, table)
    failures = check_bands(cfg, reports, n_calib, n_test)
    if failures:
        return RunOutcome(reports, [], failures, BandCheckError("; ".join(failures)))
    agg = aggregate(reports)
    write_rows(out / "aggregate.csv", agg, AGG_COLUMNS)
    if cfg.plots:
        _interval_plots(out, results, cfg)
    return RunOutcome(reports, agg, [])


# sweeps -----------------------------------------------------------------------

SWEEP_ALPHA_COLUMNS = ["alpha", "method", "kind", "seed", "mc", "cc", "wslab", "mean_set_size", "schema_version"]


def _sweep_row(cfg, pred, splits, scaler, seed, alpha, kind):
    rep = summarize(pred, splits, cfg.dataset if cfg.synthetic else None, cfg.wslab, seed=seed)
    size = rep.mean_set_size * (scaler.y_std if scaler is not None else 1.0)
    return {"alpha": alpha, "method": rep.method, "kind": kind, "seed": seed, "mc": rep.mc,
            "cc": "" if rep.cc is None else rep.cc, "wslab": "" if rep.wslab is None else rep.wslab,
            "mean_set_size": size, "schema_version": SCHEMA_VERSION}


def sweep_alpha_seed(cfg: ExperimentConfig, seed: int, table: Dataset | None = None) -> list[dict]:
    """One trained model per (method, kind); recalibrated at every sweep level."""
    splits, scaler = make_splits(cfg, seed, table)
    cde = fit_cde(cfg, splits.train, seed) if cfg.needs_cde else None
    tr = _Trainer(cfg, splits, cde, seed)
    base = cfg.alphas[0]
    fitted = []
    for kind in cfg.kinds:
        if "CP" in cfg.methods:
            fitted.append((kind, tr.cp(kind, base)))
        if "KS-CP" in cfg.methods:
            fitted.append((kind, tr.kscp(kind, base)[0]))
    coqr = None
    if "COQR" in cfg.methods:
        coqr = calibrate(tr.oqr_model(base), "quantile", splits.calib, base, rule=cfg.rule, method="COQR")
        fitted.append(("quantile", coqr))
    rows = []
    for alpha in cfg.sweep_alphas:
        for kind, pred in fitted:
            rows.append(_sweep_row(cfg, pred.with_alpha(alpha), splits, scaler, seed, alpha, kind))
        if "OQR" in cfg.methods:
            # the raw band has no threshold to recalibrate; it is refit at each level
            rows.append(_sweep_row(cfg, FixedBandPredictor(tr.oqr_model(alpha), alpha), splits, scaler, seed,
                                   alpha, "quantile"))
        if "CDE" in cfg.methods:
            rows.append(_sweep_row(cfg, GenerativePredictor(cde, alpha, cfg.cde.n_samples, seed), splits, scaler,
                                   seed, alpha, "NA"))
    return rows


def _summary(rows, keys, metrics) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        row = dict(zip(keys, key))
        row["n_seeds"] = len(rs)
        for m in metrics:
            row[m] = mean_std([r[m] for r in rs])
        out.append(row)
    return out


def _mean_of(cell: str) -> float:
    return math.nan if cell in ("NA", "inf") else float(cell.split("(")[0])


def sweep_alpha(cfg: ExperimentConfig, out_dir=None) -> RunOutcome:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = load_dataset(cfg)
    results, error = _map_seeds(sweep_alpha_seed, cfg, list(cfg.seeds), table)
    rows = [r for rs in results for r in rs]
    write_rows(out / "sweep_alpha.csv", rows, SWEEP_ALPHA_COLUMNS)
    if error is not None:
        return RunOutcome(rows, [], [], error)
    summ = _summary(rows, ["alpha", "method", "kind"], ["mc", "cc", "wslab", "mean_set_size"])
    write_rows(out / "sweep_alpha_summary.csv", summ)
    if cfg.plots:
        (out / "plots").mkdir(exist_ok=True)
        metric = "cc" if cfg.synthetic else "wslab"
        series: dict = {}
        for r in summ:
            xs, ys = series.setdefault(f"{r['method']} {r['kind']}", ([], []))
            xs.append(1 - r["alpha"])
            ys.append(_mean_of(r[metric]))
        (out / "plots" / f"sweep_alpha_{metric}.svg").write_text(
            svg.line_plot(series, title=f"{metric} across levels", xlabel="1 - alpha", ylabel=metric))
    return RunOutcome(rows, summ, [])


ABLATE_COLUMNS = ["lam", "gamma", "kind", "seed", "mc", "cc", "wslab", "mean_set_size", "mse", "reg_residual",
                  "schema_version"]


def sweep_ablate_seed(cfg: ExperimentConfig, seed: int, table: Dataset | None = None) -> list[dict]:
    """KS-CP retrained for every (lambda, gamma) cell from a shared warm start and density model."""
    splits, scaler = make_splits(cfg, seed, table)
    cde = fit_cde(cfg, splits.train, seed)
    tr = _Trainer(cfg, splits, cde, seed)
    alpha = cfg.alphas[0]
    rows = []
    for kind in cfg.kinds:
        for lam in cfg.lambdas:
            for gamma in cfg.gammas:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pred, _ = tr.kscp(kind, alpha, lam=lam, gamma=gamma)
                rep = _report(cfg, pred, splits, scaler, seed, cde, _dataset_name(cfg))
                rows.append({"lam": lam, "gamma": gamma, "kind": kind, "seed": seed, "mc": rep.mc,
                             "cc": "" if rep.cc is None else rep.cc, "wslab": "" if rep.wslab is None else rep.wslab,
                             "mean_set_size": rep.mean_set_size, "mse": "" if rep.mse is None else rep.mse,
                             "reg_residual": rep.reg_residual, "schema_version": SCHEMA_VERSION})
    return rows


def sweep_ablate(cfg: ExperimentConfig, out_dir=None) -> RunOutcome:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = load_dataset(cfg)
    results, error = _map_seeds(sweep_ablate_seed, cfg, list(cfg.seeds), table)
    rows = [r for rs in results for r in rs]
    write_rows(out / "sweep_ablate.csv", rows, ABLATE_COLUMNS)
    if error is not None:
        return RunOutcome(rows, [], [], error)
    summ = _summary(rows, ["lam", "gamma", "kind"], ["mc", "cc", "wslab", "mean_set_size", "mse", "reg_residual"])
    write_rows(out / "sweep_ablate_summary.csv", summ)
    if cfg.plots:
        (out / "plots").mkdir(exist_ok=True)
        metric = "cc" if cfg.synthetic else "wslab"
        series: dict = {}
        for r in summ:
            xs, ys = series.setdefault(f"{r['kind']} gamma={r['gamma']:g}", ([], []))
            xs.append(math.log10(r["lam"]) if r["lam"] > 0 else -2.0)
            ys.append(_mean_of(r[metric]))
        (out / "plots" / f"sweep_lambda_{metric}.svg").write_text(
            svg.line_plot(series, title=f"{metric} across lambda", xlabel="log10 lambda", ylabel=metric))
    return RunOutcome(rows, summ, [])
