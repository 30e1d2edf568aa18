"""End-to-end acceptance criteria, one test per criterion.

Each test prints a ``PASS n:`` or ``FAIL n:`` line as it runs. The lines are
repeated together in the terminal summary. Run this module alone with

    python3 -m pytest tests/test_acceptance.py -v -s
"""

import csv
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from kscp import autodiff as ad
from kscp.cli import main
from kscp.data import gen_setting_one, gen_setting_two, setting_one_mean, split
from kscp.evaluate import min_window_coverage_bruteforce, wslab_from_flags
from kscp.experiment import build_config, read_config, run, sweep_ablate
from kscp.ksreg import KSConfig, OQRConfig, coverage_gap, ks_exact, ks_objective, ks_smoothed, oqr_objective
from kscp.models import ModelSpec, init, mse_objective, pinball_objective
from kscp.scores import score

pytestmark = pytest.mark.acceptance


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, line


def config(**settings):
    """ExperimentConfig from ``section__key=value`` keyword overrides."""
    ov = {tuple(k.split("__")): str(v) for k, v in settings.items()}
    return build_config(read_config("", ov))


def by(reports, method, kind):
    return [r for r in reports if r.method == method and r.kind == kind]


def mean_of(reports, field):
    return float(np.mean([getattr(r, field) for r in reports]))


# 1 ---------------------------------------------------------------------------

def test_1_marginal_coverage_guarantee(tmp_path):
    t0 = time.perf_counter()
    cfg = config(experiment__dataset="setting-two", experiment__methods="CP", experiment__alphas="0.1,0.2,0.5",
                 experiment__seeds=",".join(map(str, range(50))), experiment__n_calib=1000,
                 experiment__n_test=10_000, wslab__n_dirs=0, output__dump_intervals="false")
    outcome = run(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    parts, ok = [], outcome.error is None
    for alpha in (0.1, 0.2, 0.5):
        m = float(np.mean([r.mc for r in outcome.reports if r.alpha == alpha]))
        lo, hi = 1 - alpha - 0.01, 1 - alpha + 1 / 1001 + 0.01
        ok &= lo <= m <= hi
        parts.append(f"a={alpha}: {m:.4f} in [{lo:.3f},{hi:.4f}]")
    ok &= elapsed < 120
    verdict(1, "marginal coverage over 50 seeds", ok, "; ".join(parts) + f"; {elapsed:.0f}s")


# 2 ---------------------------------------------------------------------------

def test_2_setting_two_cp_golden_band(tmp_path):
    t0 = time.perf_counter()
    cfg = config(experiment__dataset="setting-two", experiment__methods="CP", output__dump_intervals="false")
    outcome = run(cfg, tmp_path)
    per_seed = (time.perf_counter() - t0) / 5
    reps = by(outcome.reports, "CP", "residual")
    got = {f: mean_of(reps, f) for f in ("mc", "cc", "mean_set_size", "mse")}
    target = {"mc": (0.90, 0.02), "cc": (0.90, 0.03), "mean_set_size": (3.34, 0.20), "mse": (1.00, 0.05)}
    ok = outcome.error is None and len(reps) == 5 and per_seed < 60
    ok &= all(abs(got[f] - c) <= tol for f, (c, tol) in target.items())
    detail = ", ".join(f"{f}={got[f]:.3f} (target {c}+-{tol})" for f, (c, tol) in target.items())
    verdict(2, "Setting II CP residual golden band", ok, detail + f"; {per_seed:.1f}s/seed")


# 3, 4 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def setting_one_run(tmp_path_factory):
    t0 = time.perf_counter()
    cfg = config(experiment__dataset="setting-one", experiment__methods="CP,KS-CP,COQR",
                 experiment__kinds="residual,quantile", output__dump_intervals="false")
    outcome = run(cfg, tmp_path_factory.mktemp("setting-one"))
    return outcome, (time.perf_counter() - t0) / 5


def test_3_setting_one_headline_contrast(setting_one_run):
    outcome, per_seed = setting_one_run
    cp, ks = by(outcome.reports, "CP", "residual"), by(outcome.reports, "KS-CP", "residual")
    cc_cp, cc_ks = mean_of(cp, "cc"), mean_of(ks, "cc")
    size_cp, size_ks = mean_of(cp, "mean_set_size"), mean_of(ks, "mean_set_size")
    mse_cp, mse_ks = mean_of(cp, "mse"), mean_of(ks, "mse")
    ok = (outcome.error is None and len(cp) == len(ks) == 5 and cc_cp <= 0.65 and cc_ks >= 0.80
          and size_ks > size_cp and mse_ks > mse_cp and per_seed < 600)
    verdict(3, "Setting I CP vs KS-CP residual", ok,
            f"CC {cc_cp:.3f} -> {cc_ks:.3f} (per seed KS {[round(r.cc, 3) for r in ks]}), "
            f"size {size_cp:.2f} -> {size_ks:.2f}, MSE {mse_cp:.3f} -> {mse_ks:.3f}; {per_seed:.0f}s/seed")


def test_4_quantile_contrast_against_coqr(setting_one_run):
    outcome, per_seed = setting_one_run
    ks, coqr = by(outcome.reports, "KS-CP", "quantile"), by(outcome.reports, "COQR", "quantile")
    cc_ks, cc_coqr = mean_of(ks, "cc"), mean_of(coqr, "cc")
    ok = outcome.error is None and len(ks) == len(coqr) == 5 and cc_ks - cc_coqr >= 0.1 and per_seed < 600
    verdict(4, "Setting I quantile KS-CP vs COQR", ok,
            f"CC KS-CP {cc_ks:.3f}, COQR {cc_coqr:.3f}, gap {cc_ks - cc_coqr:.3f} (need >= 0.1)")


# 5 ---------------------------------------------------------------------------

def test_5_smoothed_ks_convergence():
    rng = np.random.default_rng(5)
    worst, trend_ok = 0.0, True
    for _ in range(20):
        a = rng.normal(size=100)
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), 100)
        exact = ks_exact(a, b)
        worst = max(worst, abs(float(ks_smoothed(a, b, 200.0, n_t=512)) - exact))
        gaps = [abs(float(ks_smoothed(a, b, g, n_t=512)) - exact) for g in (1.0, 10.0, 100.0, 1000.0)]
        trend_ok &= gaps[-1] <= gaps[0] and gaps[-1] <= 0.01
    verdict(5, "smoothed KS converges to exact KS", worst <= 0.02 and trend_ok,
            f"max |smoothed(200) - exact| = {worst:.4f} (<= 0.02); gap shrinks 1 -> 1000: {trend_ok}")


# 6 ---------------------------------------------------------------------------

def test_6_score_transform_at_most_doubles_ks():
    rng = np.random.default_rng(6)
    n = 10_000
    slack_used = -math.inf
    for m in np.linspace(-1.0, 1.0, 5):
        for s in np.linspace(0.5, 2.0, 5):
            xp, xq = rng.uniform(-1.5, 2.5, n), rng.uniform(-1.5, 2.5, n)
            yp, yq = rng.standard_normal(n), rng.normal(m, s, n)
            w, b, c = rng.normal(size=3)
            stretch = rng.uniform(0.5, 1.5)
            f = lambda x: w * x + b  # noqa: E731
            sig = lambda x: np.exp(0.3 * c * x)  # noqa: E731
            lo = lambda x: f(x) - sig(x)  # noqa: E731
            hi = lambda x: f(x) + stretch * sig(x)  # noqa: E731
            ky = ks_exact(yp, yq)
            band_p, band_q = np.column_stack([lo(xp), hi(xp)]), np.column_stack([lo(xq), hi(xq)])
            band_p.sort(axis=1)
            band_q.sort(axis=1)
            pairs = [
                (score("residual", f(xp), yp), score("residual", f(xq), yq)),
                (score("normalized", f(xp), yp, sig(xp)), score("normalized", f(xq), yq, sig(xq))),
                (score("quantile", band_p, yp), score("quantile", band_q, yq)),
            ]
            for vp, vq in pairs:
                slack_used = max(slack_used, ks_exact(vp, vq) - 2 * ky)
    verdict(6, "KS(scores) <= 2 KS(targets) + 0.05", slack_used <= 0.05,
            f"max KS(scores) - 2 KS(targets) over 75 cases = {slack_used:.4f}")


# 7 ---------------------------------------------------------------------------

def _objectives():
    rng = np.random.default_rng(7)
    sp = split(gen_setting_one(700, 7), 300, 300, 7)
    tr, cal = sp.train, sp.calib
    point = init(ModelSpec.mlp(1, (6, 5)), 0)
    quant = init(ModelSpec.quantile(1, (6, 5)), 0)
    idx = np.arange(80)
    gen = setting_one_mean(cal.x[:12, 0])[:, None] + rng.standard_normal((12, 40))
    grid = np.linspace(-3.0, 7.0, 128)  # frozen so finite differences do not move it
    ks_cfg = KSConfig()

    def ks_fn(model, kind):
        def fn(th):
            obj, _ = ks_objective(model, th, kind, ks_cfg, tr.x[:80], tr.y[:80], cal.x[20:120], cal.y[20:120],
                                  cal.x[:12], gen, grid=grid)
            return obj
        return fn

    mse_obj = mse_objective(point, tr)
    pin_obj = pinball_objective(quant, tr, 0.05, 0.95)
    oqr_obj = oqr_objective(quant, tr, OQRConfig())
    return {
        "MSE": (point, lambda th: mse_obj(th, idx)),
        "pinball": (quant, lambda th: pin_obj(th, idx)),
        "KS composite (residual)": (point, ks_fn(point, "residual")),
        "KS composite (quantile)": (quant, ks_fn(quant, "quantile")),
        "OQR composite": (quant, lambda th: oqr_obj(th, idx)),
    }


def test_7_gradients_match_finite_differences():
    rng = np.random.default_rng(77)
    worst = {}
    for name, (model, fn) in _objectives().items():
        for _ in range(3):
            theta = model.params + rng.normal(0, 0.5, model.params.size)
            _, g = ad.value_and_grad(fn, theta)
            coords = rng.choice(theta.size, 20, replace=False)
            num = ad.finite_difference(fn, theta, coords, 1e-5)
            # relative error with a 1e-3 floor so near-zero partials compare absolutely
            rel = np.abs(g[coords] - num) / np.maximum(np.maximum(np.abs(g[coords]), np.abs(num)), 1e-3)
            worst[name] = max(worst.get(name, 0.0), float(rel.max()))
    ok = all(v <= 1e-4 for v in worst.values())
    verdict(7, "gradients vs central differences", ok, ", ".join(f"{k}: {v:.1e}" for k, v in worst.items()))


# 8 ---------------------------------------------------------------------------

def test_8_coverage_gap_identity():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        a = np.abs(rng.normal(0, rng.uniform(0.5, 2), rng.integers(20, 400)))
        b = np.abs(rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.integers(20, 400)))
        worst = max(worst, abs(coverage_gap(a, b, 128) - ks_exact(a, b)))
    verdict(8, "level-grid coverage gap equals KS", worst <= 1 / 128,
            f"max |gap - KS| over 200 pairs = {worst:.5f} (<= {1 / 128:.5f})")


# 9 ---------------------------------------------------------------------------

def test_9_wslab_linear_scan_equals_bruteforce():
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(300):
        n = int(rng.integers(20, 201))
        x = rng.normal(size=n)
        covered = rng.random(n) < rng.uniform(0.2, 1.0)
        delta = rng.uniform(20 / n, 1.0)
        m = math.ceil(delta * n - 1e-9)
        fast = wslab_from_flags(x, covered, delta, n_dirs=1, seed=int(rng.integers(1 << 30)))
        brute = min_window_coverage_bruteforce(covered[np.argsort(x, kind="stable")], m)
        mismatches += fast != brute
    verdict(9, "WSLAB linear scan equals exhaustive windows", mismatches == 0,
            f"{mismatches} mismatches over 300 random 1-d datasets with n <= 200")


# 10 --------------------------------------------------------------------------

def _lambda_sweep(tmp_path, dataset):
    cfg = config(experiment__dataset=dataset, experiment__seeds="0,1", sweep__lambdas="0.1,1,10,100,1000",
                 sweep__gammas="10", output__dump_intervals="false")
    outcome = sweep_ablate(cfg, tmp_path / dataset)
    assert outcome.error is None, outcome.error
    lams = sorted({r["lam"] for r in outcome.reports})
    mean = lambda lam, f: float(np.mean([r[f] for r in outcome.reports if r["lam"] == lam]))  # noqa: E731
    return lams, [mean(l, "cc") for l in lams], [mean(l, "mse") for l in lams]


def test_10_lambda_ablation_trends(tmp_path):
    t0 = time.perf_counter()
    lams, cc1, mse1 = _lambda_sweep(tmp_path, "setting-one")
    _, cc2, _ = _lambda_sweep(tmp_path, "setting-two")
    elapsed = time.perf_counter() - t0
    logl = np.log10(lams)
    rho_cc = stats.spearmanr(logl, cc1).statistic
    rho_mse = stats.spearmanr(logl, mse1).statistic
    spread = max(cc2) - min(cc2)
    ok = rho_cc > 0 and rho_mse > 0 and spread <= 0.05 and elapsed < 1800
    verdict(10, "lambda ablation trends", ok,
            f"Setting I CC {np.round(cc1, 3).tolist()} (rho {rho_cc:.2f}), MSE {np.round(mse1, 3).tolist()} "
            f"(rho {rho_mse:.2f}); Setting II CC spread {spread:.3f} (<= 0.05); {elapsed:.0f}s")


# 11 --------------------------------------------------------------------------

def test_11_csv_pipeline_smoke(tmp_path, capsys):
    rng = np.random.default_rng(11)
    n = 500
    x = rng.normal(size=(n, 3))
    y = 50 + 4 * x[:, 0] - 2 * x[:, 1] + rng.normal(0, 1 + np.abs(x[:, 2]), n)
    data = tmp_path / "table.csv"
    np.savetxt(data, np.column_stack([x, y]), delimiter=",", header="a,b,c,price", comments="", fmt="%.6f")
    out = tmp_path / "csv-run"
    alpha = 0.1
    code = main(["run", "--csv", str(data), "--target", "price", "--methods", "CP", "--kinds", "residual",
                 "--alphas", str(alpha), "--seeds", ",".join(map(str, range(200))), "--out-dir", str(out),
                 "--set", "output.dump_intervals=false"])
    capsys.readouterr()
    with (out / "reports.csv").open() as fh:
        mcs = [float(r["mc"]) for r in csv.DictReader(fh)]
    n_calib = round(0.25 * n)
    m = float(np.mean(mcs)) if mcs else math.nan
    lo, hi = 1 - alpha - 0.01, 1 - alpha + 1 / (n_calib + 1) + 0.01
    ok = code == 0 and len(mcs) == 200 and lo <= m <= hi and (out / "aggregate.csv").exists()
    verdict(11, "CSV pipeline smoke test", ok,
            f"exit {code}; mean MC over {len(mcs)} re-splits = {m:.4f} in [{lo:.3f}, {hi:.4f}]")
