"""Conditional density estimators p(y | x).

Two backends share one representation: for a batch of inputs each returns a
Gaussian mixture ``(weights, means, stds)`` of shape (m, K).

* :class:`MdnModel` -- a mixture density network, K = number of components.
* :class:`NwCde` -- Nadaraya-Watson kernel estimator with Gaussian kernels,
  K = number of retained training rows, every component having std ``h1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .models import OptimizerConfig, descend, init_params, network

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-3


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    return x


def mixture_mean(w, mu) -> np.ndarray:
    return np.sum(w * mu, axis=-1)


def mixture_std(w, mu, sig) -> np.ndarray:
    """sqrt(sum w (sig^2 + mu^2) - (sum w mu)^2), by the law of total variance."""
    m = mixture_mean(w, mu)
    var = np.sum(w * (sig ** 2 + (mu - m[..., None]) ** 2), axis=-1)
    return np.sqrt(var)


def sample_mixture(w, mu, sig, n_s: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_s`` samples per row: a component index, then a Gaussian draw."""
    m, k = w.shape
    cum = np.cumsum(w, axis=1)
    cum /= cum[:, -1:]
    u = rng.random((m, n_s))
    # offsetting row r by r makes the flattened cumulative weights monotone
    offs = np.arange(m, dtype=np.float64)[:, None]
    comp = np.searchsorted((cum + offs).ravel(), (u + offs).ravel(), side="right").reshape(m, n_s)
    comp -= (np.arange(m) * k)[:, None]
    np.clip(comp, 0, k - 1, out=comp)
    rows = np.arange(m)[:, None]
    z = rng.standard_normal((m, n_s))
    return mu[rows, comp] + sig[rows, comp] * z


CHUNK = 1024


class _Mixture:
    sigma_floor: float = SIGMA_FLOOR

    def mixture(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def _chunked(self, x, fn) -> np.ndarray:
        x = _rows(x)
        return np.concatenate([fn(*self.mixture(x[i:i + CHUNK])) for i in range(0, max(len(x), 1), CHUNK)])

    def sample(self, x, n_s: int, seed=None) -> np.ndarray:
        """Conditional draws, shape (n_s,) for a single x, (m, n_s) for a batch."""
        if n_s < 1:
            raise ValueError("n_s must be >= 1")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        single = np.ndim(x) == 0 or (np.ndim(x) == 1 and self.input_dim > 1)
        xr = _rows(x) if not single else np.asarray(x, dtype=np.float64).reshape(1, -1)
        out = self._chunked(xr, lambda w, mu, sig: sample_mixture(w, mu, sig, n_s, rng))
        return out[0] if single else out

    def cond_mean(self, x) -> np.ndarray:
        return self._chunked(x, lambda w, mu, sig: mixture_mean(w, mu))

    def cond_std(self, x) -> np.ndarray:
        return np.maximum(self._chunked(x, mixture_std), self.sigma_floor)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


# mixture density network ----------------------------------------------------

def _mdn_heads(widths, slope, theta, x, n_comp, y_scale, floor):
    out = network(widths, slope, theta, x)
    logits = ad.getitem(out, (slice(None), slice(0, n_comp)))
    mu = ad.getitem(out, (slice(None), slice(n_comp, 2 * n_comp)))
    raw = ad.getitem(out, (slice(None), slice(2 * n_comp, 3 * n_comp)))
    log_w = logits - ad.reshape(ad.logsumexp(logits, axis=1), (-1, 1))
    sig = ad.softplus(raw) + floor / y_scale
    return log_w, mu, sig


def _mdn_nll(log_w, mu, sig, y):
    """Mean negative log-likelihood of y under the mixture (log-sum-exp)."""
    z = (ad.reshape(y, (-1, 1)) - mu) / sig
    comp = log_w - ad.log(sig) - 0.5 * ad.square(z) - HALF_LOG_2PI
    return -ad.mean(ad.logsumexp(comp, axis=1))


@dataclass
class MdnModel(_Mixture):
    """Mixture density network on internally standardized inputs/targets."""

    n_components: int
    widths: tuple
    params: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    slope: float = 0.01
    sigma_floor: float = SIGMA_FLOOR
    history: list = field(default_factory=list, compare=False, repr=False)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def _xs(self, x):
        return (_rows(x) - self.x_mean) / self.x_std

    def heads(self, theta, x):
        return _mdn_heads(self.widths, self.slope, theta, self._xs(x), self.n_components, self.y_std,
                          self.sigma_floor)

    def mixture(self, x):
        log_w, mu, sig = self.heads(self.params, x)
        return np.exp(log_w), mu * self.y_std + self.y_mean, sig * self.y_std

    def nll(self, x, y) -> float:
        """Mean NLL in original target units."""
        log_w, mu, sig = self.heads(self.params, x)
        ys = (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std
        return float(_mdn_nll(log_w, mu, sig, ys)) + math.log(self.y_std)

    def to_dict(self) -> dict:
        return {
            "format": "kscp-mdn",
            "version": 1,
            "n_components": self.n_components,
            "widths": list(self.widths),
            "params": self.params.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "slope": self.slope,
            "sigma_floor": self.sigma_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdnModel":
        if d.get("format") != "kscp-mdn":
            raise ValueError("not an MDN checkpoint")
        return cls(int(d["n_components"]), tuple(d["widths"]), np.asarray(d["params"], float),
                   np.asarray(d["x_mean"], float), np.asarray(d["x_std"], float), float(d["y_mean"]),
                   float(d["y_std"]), float(d["slope"]), float(d["sigma_floor"]))


def mdn_nll(mdn: MdnModel, batch: Dataset) -> float:
    if batch.n == 0:
        raise ValueError("empty batch")
    val = mdn.nll(batch.x, batch.y)
    if not math.isfinite(val):
        raise ArithmeticError("non-finite NLL")
    return val


def default_mdn_optimizer(**kw) -> OptimizerConfig:
    base = dict(lr=3e-3, epochs=300, batch_size=256, clip=10.0, seed=0, method="adam")
    base.update(kw)
    return OptimizerConfig(**base)


def fit_mdn(train: Dataset, n_components: int = 5, cfg: OptimizerConfig | None = None,
            hidden=(64, 64), slope: float = 0.01, sigma_floor: float = SIGMA_FLOOR) -> MdnModel:
    """Fit an MDN by minibatch NLL minimization (Adam by default).

    Component means start at evenly spaced quantiles of the training target so
    that multimodal structure is reachable from the first step.
    """
    if n_components < 1:
        raise ValueError("need at least one mixture component")
    cfg = cfg or default_mdn_optimizer()
    x_mean = train.x.mean(axis=0)
    x_std = np.where(train.x.std(axis=0) > 0, train.x.std(axis=0), 1.0)
    y_mean = float(train.y.mean())
    y_std = float(train.y.std()) or 1.0
    widths = (train.d, *hidden, 3 * n_components)
    params = init_params(widths, cfg.seed)
    ys = (train.y - y_mean) / y_std
    qs = np.quantile(ys, (np.arange(n_components) + 0.5) / n_components)
    params[-3 * n_components + n_components:-n_components] = qs
    mdn = MdnModel(n_components, widths, params, x_mean, x_std, y_mean, y_std, slope, sigma_floor)
    xs = mdn._xs(train.x)

    def objective(theta, idx):
        log_w, mu, sig = _mdn_heads(widths, slope, theta, xs[idx], n_components, y_std, sigma_floor)
        return _mdn_nll(log_w, mu, sig, ys[idx])

    mdn.params, hist = descend(params, objective, train.n, cfg)
    mdn.history = [h + math.log(y_std) for h in hist]
    return mdn


# Nadaraya-Watson ------------------------------------------------------------

@dataclass
class NwCde(_Mixture):
    """p(y|x) = sum_i K_h2(|x - x_i|) N(y; y_i, h1^2) / sum_i K_h2(|x - x_i|)."""

    x: np.ndarray
    y: np.ndarray
    h1: float
    h2: float
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if self.h1 <= 0 or self.h2 <= 0:
            raise ValueError("bandwidths must be positive")
        self.x = _rows(self.x)
        self.y = np.asarray(self.y, dtype=np.float64)

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def kernel_weights(self, x) -> np.ndarray:
        """Unnormalized feature-kernel weights, shape (m, n)."""
        x = _rows(x)
        d2 = ((x[:, None, :] - self.x[None, :, :]) ** 2).sum(-1)
        return np.exp(-0.5 * d2 / self.h2 ** 2)

    def _normalized(self, x) -> np.ndarray:
        k = self.kernel_weights(x)
        tot = k.sum(axis=1, keepdims=True)
        if np.any(tot == 0):
            raise ValueError("query outside data support")
        return k / tot

    def mixture(self, x):
        w = self._normalized(x)
        m = w.shape[0]
        mu = np.broadcast_to(self.y, (m, self.y.size))
        sig = np.broadcast_to(self.h1, (m, self.y.size))
        return w, mu, sig

    def density(self, x, y) -> np.ndarray:
        """p_hat(y | x) for a single x and an array of y values."""
        w = self._normalized(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        z = (y[:, None] - self.y[None, :]) / self.h1
        return (np.exp(-0.5 * z ** 2) / (self.h1 * math.sqrt(2 * math.pi))) @ w

    def to_dict(self) -> dict:
        return {"format": "kscp-nw", "version": 1, "x": self.x.tolist(), "y": self.y.tolist(),
                "h1": self.h1, "h2": self.h2}

    @classmethod
    def from_dict(cls, d: dict) -> "NwCde":
        if d.get("format") != "kscp-nw":
            raise ValueError("not a Nadaraya-Watson checkpoint")
        return cls(np.asarray(d["x"], float), np.asarray(d["y"], float), float(d["h1"]), float(d["h2"]))


def fit_nw(train: Dataset, h1: float | None = None, h2: float | None = None) -> NwCde:
    """Retain the training rows; bandwidths default to n^(-1/3)."""
    h = train.n ** (-1.0 / 3.0)
    return NwCde(train.x.copy(), train.y.copy(), h1 or h, h2 or h)


def nw_density(nw: NwCde, x, y) -> np.ndarray:
    return nw.density(x, y)


def sample(cde, x, n_s: int, seed=None) -> np.ndarray:
    return cde.sample(x, n_s, seed)


def cond_std(cde, x) -> np.ndarray:
    return cde.cond_std(x)


def load_cde(d: dict):
    fmt = d.get("format")
    if fmt == "kscp-mdn":
        return MdnModel.from_dict(d)
    if fmt == "kscp-nw":
        return NwCde.from_dict(d)
    raise ValueError(f"unknown density checkpoint format {fmt!r}")
