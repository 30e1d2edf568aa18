"""KS-constrained training.

The regularizer compares, for each calibration point x_i, the law of the
score under the conditional density model, V(x_i, y_hat) with
y_hat ~ p(y | x_i), against the marginal law of calibration scores. Step
indicators in the empirical CDFs are replaced by sigmoid(gamma * (t - v)) so
the distance is differentiable in the model parameters, and the worst
calibration point (hard max) is penalized:

    fit(theta) + lam * max_i max_t | F_marg(t) - G_i(t) |

with both F_marg and G_i depending on theta through the score.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .conformal import CalibratedPredictor, calibrate
from .data import Dataset, DataSplits
from .models import (
    DiffModel,
    ModelSpec,
    OptimizerConfig,
    descend,
    fit,
    init,
    mse,
    pinball,
    train_mse,
    train_pinball,
)
from .scores import check_kind, quantile_levels, score


class Ecdf:
    """Right-continuous empirical CDF t -> #{v <= t} / n."""

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=np.float64).ravel())
        if v.size == 0:
            raise ValueError("ECDF of an empty sample")
        self.values = v
        self.n = v.size

    def __call__(self, t) -> np.ndarray:
        return np.searchsorted(self.values, t, side="right") / self.n

    def quantile(self, p) -> np.ndarray:
        """Generalized inverse: smallest v with F(v) >= p."""
        p = np.asarray(p, dtype=np.float64)
        k = np.ceil(p * self.n - 1e-12).astype(int)
        return self.values[np.clip(k - 1, 0, self.n - 1)]


def ks_exact(a, b) -> float:
    """sup_t |F_a(t) - F_b(t)| evaluated on the merged breakpoints."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    t = np.concatenate([a, b])
    fa = np.searchsorted(a, t, side="right") / a.size
    fb = np.searchsorted(b, t, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def coverage_gap(marginal, conditional, n_t: int = 128) -> float:
    """max over a level grid of |p - G(F^{-1}(p))|, p = 1 - alpha = k / n_t."""
    F = Ecdf(marginal)
    G = Ecdf(conditional)
    p = np.arange(1, n_t + 1) / n_t
    return float(np.max(np.abs(p - G(F.quantile(p)))))


def t_grid(values, gamma: float, n_t: int = 128) -> np.ndarray:
    """Uniform grid over [min - 3/gamma, max + 3/gamma] of the pooled values."""
    lo = float(np.min(values)) - 3.0 / gamma
    hi = float(np.max(values)) + 3.0 / gamma
    return np.linspace(lo, hi, n_t)


def smoothed_cdf(v, t, gamma: float):
    """Mean over the last axis of sigmoid(gamma (t - v)); v (..., n) -> (..., n_t)."""
    return ad.sigmoid_cdf(v, t, gamma)


def ks_smoothed(a, b, gamma: float, grid=None, n_t: int = 512):
    """max_t |mean sigmoid(gamma (t - a)) - mean sigmoid(gamma (t - b))|.

    ``b`` may be a batch of shape (m, n_b); then one distance per row is
    returned. Works on graph tensors.
    """
    if grid is None:
        grid = t_grid(np.concatenate([np.ravel(ad.value(a)), np.ravel(ad.value(b))]), gamma, n_t)
    fa = smoothed_cdf(a, grid, gamma)
    fb = smoothed_cdf(b, grid, gamma)
    return ad.tmax(ad.absolute(fa - fb), axis=-1)


@dataclass(frozen=True)
class KSConfig:
    """Hyperparameters of the KS-constrained loop.

    ``refresh`` controls how often the marginal subsample and the generated
    conditional samples are redrawn: once per ``"epoch"`` or every ``"step"``.
    """

    lam: float = 1000.0
    gamma: float = 10.0
    n_t: int = 128
    n_s: int = 100
    calib_batch: int = 256
    epochs: int = 60
    warm_epochs: int = 200
    warm_lr: float = 1e-2
    lr: float = 5e-2
    decay: float = 0.2
    batch_size: int = 256
    clip: float | None = 10.0
    seed: int = 0
    refresh: str = "epoch"
    alpha: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.lr <= 0 or self.warm_lr <= 0:
            raise ValueError("step sizes must be positive")
        if self.n_t < 2 or self.n_s < 2:
            raise ValueError("need n_t >= 2 and n_s >= 2")
        if self.refresh not in ("epoch", "step"):
            raise ValueError("refresh must be 'epoch' or 'step'")
        if not 3 <= self.gamma <= 50:
            warnings.warn(f"gamma={self.gamma} is outside the stable range [3, 50]", stacklevel=3)

    def warm_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.warm_lr, epochs=self.warm_epochs, batch_size=self.batch_size,
                               clip=self.clip, seed=self.seed)

    def ks_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, clip=self.clip,
                               seed=self.seed, decay=self.decay)


def _score_rows(kind, pred, ys, sigma=None):
    """Scores of a (m, n) block of targets against m predictions."""
    if kind == "quantile":
        lo = ad.getitem(pred, (slice(None), slice(0, 1)))
        hi = ad.getitem(pred, (slice(None), slice(1, 2)))
        return ad.maximum(lo - ys, ys - hi)
    col = ad.reshape(pred, (-1, 1))
    r = ad.absolute(ys - col)
    if kind == "normalized":
        r = r / np.asarray(sigma).reshape(-1, 1)
    return r


def fit_term(model: DiffModel, theta, x, y, kind: str, alpha: float):
    """MSE for point models; pinball at (alpha/2, 1 - alpha/2) for the quantile head."""
    out = model.apply(theta, x)
    if kind == "quantile":
        a_lo, a_hi = quantile_levels(alpha)
        lo, hi = ad.getitem(out, (slice(None), 0)), ad.getitem(out, (slice(None), 1))
        return ad.mean(pinball(y, lo, a_lo) + pinball(y, hi, a_hi))
    return mse(out, y)


def ks_regularizer(model: DiffModel, theta, kind: str, marg_x, marg_y, cal_x, gen_y, gamma: float,
                   n_t: int = 128, marg_sigma=None, cal_sigma=None, grid=None):
    """Worst smoothed KS distance over calibration points.

    Returns ``(value, per_point, argmax)`` where ``value`` is a graph node
    when ``theta`` is one. The t-grid is a constant of the graph; by default
    it is rebuilt from the current scores.
    """
    v_marg = score(kind, model.apply(theta, marg_x), marg_y, marg_sigma)
    v_gen = _score_rows(kind, model.apply(theta, cal_x), gen_y, cal_sigma)
    if grid is None:
        pooled = np.concatenate([np.ravel(ad.value(v_marg)), np.ravel(ad.value(v_gen))])
        grid = t_grid(pooled, gamma, n_t)
    F = smoothed_cdf(v_marg, grid, gamma)
    G = smoothed_cdf(v_gen, grid, gamma)
    per_point = ad.tmax(ad.absolute(G - F), axis=1)
    j = int(ad.argmax_index(per_point))
    return ad.tmax(per_point), ad.value(per_point), j


def ks_objective(model: DiffModel, theta, kind: str, cfg: KSConfig, train_x, train_y, marg_x, marg_y,
                 cal_x, gen_y, marg_sigma=None, cal_sigma=None, grid=None):
    """fit term on the train batch + lam * worst smoothed KS. Returns (objective, info)."""
    fit = fit_term(model, theta, train_x, train_y, kind, cfg.alpha)
    if cfg.lam == 0:
        return fit, {"fit": float(ad.value(fit)), "reg": math.nan, "argmax": -1}
    reg, _, j = ks_regularizer(model, theta, kind, marg_x, marg_y, cal_x, gen_y, cfg.gamma, cfg.n_t,
                               marg_sigma, cal_sigma, grid)
    return fit + cfg.lam * reg, {"fit": float(ad.value(fit)), "reg": float(ad.value(reg)), "argmax": j}


@dataclass
class KSRun:
    """Everything a KS-CP run produces."""

    predictor: CalibratedPredictor
    warm_model: DiffModel
    log: list = field(default_factory=list)


def warm_start(spec: ModelSpec, kind: str, train: Dataset, cfg: KSConfig) -> DiffModel:
    model = init(spec, cfg.seed)
    opt = cfg.warm_optimizer()
    if kind == "quantile":
        return train_pinball(model, train, *quantile_levels(cfg.alpha), opt)
    return train_mse(model, train, opt)


def train_kscp(splits: DataSplits, spec: ModelSpec, kind: str, cfg: KSConfig, cde=None,
               model: DiffModel | None = None, return_run: bool = False):
    """Warm start, then minimize fit + lam * KS with a frozen density model, then calibrate.

    The density model must already be fitted on ``splits.train``; it is never
    refit inside the loop. Only ``splits.train`` and ``splits.calib`` are read.
    """
    check_kind(kind)
    if kind == "quantile" and spec.output_dim != 2:
        raise ValueError("quantile score needs a quantile-mlp spec")
    if kind != "quantile" and spec.output_dim != 1:
        raise ValueError(f"{kind} score needs a single-output spec")
    if cfg.lam > 0 and cde is None:
        raise ValueError("KS regularization needs a fitted conditional density model")
    if kind == "normalized" and cde is None:
        raise ValueError("normalized score needs a conditional density model")
    train, cal = splits.train, splits.calib
    warm = model if model is not None else warm_start(spec, kind, train, cfg)

    cal_sigma = cde.cond_std(cal.x) if kind == "normalized" else None
    n_s = cfg.n_s
    n_cb = min(cfg.calib_batch, cal.n)
    state: dict = {}
    log: list = []
    pending: list = []

    def draw(rng):
        state["I"] = rng.choice(cal.n, size=min(n_s, cal.n), replace=False)
        state["gen"] = cde.sample(cal.x, n_s, rng)

    def flush(epoch):
        if pending:
            log.append({
                "epoch": epoch,
                "fit": float(np.mean([p["fit"] for p in pending])),
                "reg": float(np.mean([p["reg"] for p in pending])),
                "argmax": pending[-1]["argmax"],
            })
            pending.clear()

    def objective(theta, idx):
        if cfg.lam > 0 and cfg.refresh == "step":
            draw(state["rng"])
        if cfg.lam > 0:
            cb = state["rng"].choice(cal.n, size=n_cb, replace=False)
            I = state["I"]
            obj, info = ks_objective(
                warm, theta, kind, cfg, train.x[idx], train.y[idx], cal.x[I], cal.y[I], cal.x[cb],
                state["gen"][cb], None if cal_sigma is None else cal_sigma[I],
                None if cal_sigma is None else cal_sigma[cb])
            info["argmax"] = int(cb[info["argmax"]])
        else:
            obj, info = ks_objective(warm, theta, kind, cfg, train.x[idx], train.y[idx], None, None, None, None)
        pending.append(info)
        return obj

    def on_epoch(epoch, theta):
        flush(epoch - 1)
        if cfg.lam > 0:
            state["rng"] = np.random.default_rng([cfg.seed, epoch, 7919])
            draw(state["rng"])
        return None

    theta, hist = descend(warm.params, objective, train.n, cfg.ks_optimizer(),
                          epoch_offset=cfg.warm_epochs, on_epoch=on_epoch)
    flush(cfg.warm_epochs + cfg.epochs - 1)
    final = warm.with_params(theta)
    final.history = list(warm.history) + hist
    pred = calibrate(final, kind, cal, cfg.alpha, cde=cde if kind == "normalized" else None, method="KS-CP")
    if return_run:
        return KSRun(pred, warm, log)
    return pred


def regularizer_residual(model: DiffModel, kind: str, calib: Dataset, cde, n_s: int = 100, seed: int = 0,
                         sigma=None) -> float:
    """Exact (unsmoothed) worst KS between generated-conditional and marginal calibration scores."""
    if kind == "normalized" and sigma is None:
        sigma = cde.cond_std(calib.x)
    pred = model.forward(calib.x)
    marg = np.sort(score(kind, pred, calib.y, sigma))
    gen = cde.sample(calib.x, n_s, np.random.default_rng(seed))
    v_gen = _score_rows(kind, pred, gen, sigma)
    return max(ks_exact(marg, row) for row in v_gen)


# orthogonal quantile regression baseline -------------------------------------

def oqr_regularizer(flags, lengths):
    """Pearson correlation of coverage flags and interval lengths; 0 if either is ~constant."""
    f = flags - ad.mean(flags)
    l = lengths - ad.mean(lengths)
    var_f = ad.mean(ad.square(f))
    var_l = ad.mean(ad.square(l))
    if float(ad.value(var_f)) < 1e-12 or float(ad.value(var_l)) < 1e-12:
        return 0.0
    return ad.mean(f * l) / ad.sqrt(var_f * var_l)


@dataclass(frozen=True)
class OQRConfig:
    lam: float = 0.3
    gamma: float = 10.0
    alpha: float = 0.1
    lr: float = 1e-2
    epochs: int = 300
    batch_size: int = 256
    clip: float | None = 10.0
    seed: int = 0

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, clip=self.clip,
                               seed=self.seed)


def oqr_objective(model: DiffModel, data: Dataset, cfg: OQRConfig):
    """pinball(lo) + pinball(hi) + lam * |corr(smoothed coverage, length)|."""
    a_lo, a_hi = quantile_levels(cfg.alpha)

    def obj(theta, idx):
        out = model.apply(theta, data.x[idx])
        y = data.y[idx]
        lo, hi = ad.getitem(out, (slice(None), 0)), ad.getitem(out, (slice(None), 1))
        loss = ad.mean(pinball(y, lo, a_lo) + pinball(y, hi, a_hi))
        if cfg.lam == 0:
            return loss
        cover = ad.sigmoid(cfg.gamma * (y - lo)) * ad.sigmoid(cfg.gamma * (hi - y))
        r = oqr_regularizer(cover, hi - lo)
        return loss + cfg.lam * ad.absolute(r)

    return obj


def train_oqr(splits: DataSplits, spec: ModelSpec, cfg: OQRConfig, model: DiffModel | None = None) -> DiffModel:
    if spec.output_dim != 2:
        raise ValueError("OQR needs a quantile-mlp spec")
    model = model if model is not None else init(spec, cfg.seed)
    return fit(model, oqr_objective(model, splits.train, cfg), splits.train.n, cfg.optimizer())


def train_coqr(splits: DataSplits, spec: ModelSpec, cfg: OQRConfig) -> CalibratedPredictor:
    model = train_oqr(splits, spec, cfg)
    return calibrate(model, "quantile", splits.calib, cfg.alpha, method="COQR")
