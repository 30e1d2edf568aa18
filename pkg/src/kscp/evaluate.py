"""Coverage metrics: marginal, analytic conditional, worst-slab, set size."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numba
import numpy as np
from scipy.stats import norm

from .data import MEANS, X_HIGH, X_LOW, Dataset, DataSplits
from .scores import set_size

SCHEMA_VERSION = 1


def marginal_coverage(pred, test: Dataset) -> float:
    if test.n == 0:
        raise ValueError("empty test set")
    return float(np.mean(pred.covers(test.x, test.y)))


def analytic_coverage(pred, setting: str, x) -> np.ndarray:
    """P(Y in C(x) | X = x) under the known N(mu(x), 1) noise law."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    iv = pred.predict_interval(x[:, None])
    mu = MEANS[setting](x)
    cov = norm.cdf(iv.hi - mu) - norm.cdf(iv.lo - mu)
    return np.where(iv.empty, 0.0, cov)


def cc_grid(m: int = 512) -> np.ndarray:
    return np.linspace(X_LOW, X_HIGH, m)


def conditional_coverage_synthetic(pred, setting: str, x_grid=None) -> float:
    """Worst analytic conditional coverage over an x grid (default 512 points on [-1.5, 2.5])."""
    if setting not in MEANS:
        raise ValueError(f"no known conditional law for {setting!r}")
    grid = cc_grid() if x_grid is None else np.asarray(x_grid, dtype=np.float64)
    return float(np.min(analytic_coverage(pred, setting, grid)))


@numba.njit(cache=True)
def _min_density_window(covered, m):
    """Min over windows of length >= m of (covered count)/(length), exactly.

    Returns (count, length) of the minimizing window. Prefix sums P form the
    points (i, P[i]); for each right end j the best start is the tangent from
    (j, P[j]) to the upper hull of starts 0..j-m. Starts left of a previous
    tangent can be dropped for good, which keeps the scan linear.
    """
    n = covered.shape[0]
    P = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        P[i + 1] = P[i] + covered[i]
    hull = np.empty(n + 1, dtype=np.int64)
    lo = 0
    hi = 0
    best_c = 1
    best_l = 0  # no window yet
    for j in range(m, n + 1):
        i = j - m
        # push start i onto the upper hull (slopes strictly decreasing)
        while hi - lo >= 2:
            a = hull[hi - 2]
            b = hull[hi - 1]
            # drop b when it is on or below the chord a -> i
            if (P[b] - P[a]) * (i - b) <= (P[i] - P[b]) * (b - a):
                hi -= 1
            else:
                break
        hull[hi] = i
        hi += 1
        # walk the tangent: slope(h, j) = (P[j] - P[h]) / (j - h)
        while hi - lo >= 2:
            a = hull[lo]
            b = hull[lo + 1]
            if (P[j] - P[b]) * (j - a) <= (P[j] - P[a]) * (j - b):
                lo += 1
            else:
                break
        s = hull[lo]
        c = P[j] - P[s]
        length = j - s
        if best_l == 0 or c * best_l < best_c * length:
            best_c = c
            best_l = length
    return best_c, best_l


def min_window_coverage(covered_sorted, min_size: int) -> float:
    """Linear-scan minimum coverage over contiguous windows of >= ``min_size`` points."""
    c = np.ascontiguousarray(np.asarray(covered_sorted, dtype=np.int64))
    if min_size < 1 or min_size > c.size:
        raise ValueError("invalid window size")
    cnt, length = _min_density_window(c, int(min_size))
    return cnt / length


def min_window_coverage_bruteforce(covered_sorted, min_size: int) -> float:
    """Exhaustive enumeration of every window; the oracle for the linear scan."""
    c = np.asarray(covered_sorted, dtype=np.int64)
    n = c.size
    P = np.concatenate([[0], np.cumsum(c)])
    best = math.inf
    for i in range(n):
        for j in range(i + min_size, n + 1):
            best = min(best, (P[j] - P[i]) / (j - i))
    return best


def random_directions(d: int, n_dirs: int, seed: int) -> np.ndarray:
    """Uniform unit vectors via normalized Gaussians, shape (n_dirs, d)."""
    v = np.random.default_rng(seed).standard_normal((n_dirs, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def wslab_from_flags(x, covered, delta: float = 0.1, n_dirs: int = 1000, seed: int = 0) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    covered = np.asarray(covered, dtype=np.int64)
    n = covered.size
    m = int(math.ceil(delta * n - 1e-9))
    if not 0 < delta <= 1 or m < 20:
        raise ValueError(f"slab mass delta*n = {delta * n:.1f} is too small (need >= 20 points)")
    dirs = random_directions(x.shape[1], n_dirs, seed)
    if x.shape[1] == 1:
        dirs = dirs[:1]  # +-1 give the same windows in reverse
    worst = 1.0
    for v in dirs:
        order = np.argsort(x @ v, kind="stable")
        worst = min(worst, min_window_coverage(covered[order], m))
    return float(worst)


def wslab(pred, test: Dataset, delta: float = 0.1, n_dirs: int = 1000, seed: int = 0) -> float:
    """Worst coverage over slabs {a <= v.x <= b} holding at least delta*n test points."""
    return wslab_from_flags(test.x, pred.covers(test.x, test.y), delta, n_dirs, seed)


def mean_set_size(pred, x) -> float:
    return float(np.mean(set_size(pred.predict_interval(x))))


@dataclass
class MetricsReport:
    method: str
    kind: str
    dataset: str
    alpha: float
    seed: int
    mc: float
    cc: float | None
    wslab: float | None
    mean_set_size: float
    mse: float | None
    reg_residual: float | None
    empty_frac: float
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> dict:
        return {k: ("" if v is None else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class WslabConfig:
    delta: float = 0.1
    n_dirs: int = 1000
    seed: int = 0


def summarize(pred, splits: DataSplits, setting: str | None = None, wslab_cfg: WslabConfig | None = None,
              method: str | None = None, dataset: str = "", seed: int = 0, reg_residual: float | None = None
              ) -> MetricsReport:
    test = splits.test
    wc = wslab_cfg or WslabConfig()
    iv = pred.predict_interval(test.x)
    point = pred.point(test.x)
    ws = None
    if wc.n_dirs > 0 and wc.delta * test.n >= 20:
        ws = wslab(pred, test, wc.delta, wc.n_dirs, wc.seed)
    return MetricsReport(
        method=method or getattr(pred, "method", "CP"),
        kind=getattr(pred, "kind", "NA"),
        dataset=dataset or (setting or ""),
        alpha=float(pred.alpha),
        seed=seed,
        mc=marginal_coverage(pred, test),
        cc=conditional_coverage_synthetic(pred, setting) if setting in MEANS else None,
        wslab=ws,
        mean_set_size=float(np.mean(set_size(iv))),
        mse=None if point is None else float(np.mean((point - test.y) ** 2)),
        reg_residual=reg_residual,
        empty_frac=float(np.mean(iv.empty)),
    )


def subgroup_report(pred, test: Dataset, mask) -> dict:
    """Coverage and mean set size inside and outside a boolean subgroup."""
    mask = np.asarray(mask, dtype=bool)
    cov = pred.covers(test.x, test.y)
    size = set_size(pred.predict_interval(test.x))
    out = {}
    for name, m in (("in", mask), ("out", ~mask)):
        out[name] = {
            "n": int(m.sum()),
            "coverage": float(cov[m].mean()) if m.any() else math.nan,
            "set_size": float(size[m].mean()) if m.any() else math.nan,
        }
    return out


def write_reports(path, reports) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MetricsReport.columns(), lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
