"""Differentiable regressors, objectives and a minibatch gradient-descent loop.

Parameters live in one flat float64 vector. Layers are stored in order as
``W`` (row-major, shape ``(fan_in, fan_out)``) followed by ``b``; a linear
model on one feature is therefore ``theta = (weight, bias)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import Dataset

CHECKPOINT_VERSION = 1
KINDS = ("linear", "mlp", "quantile-mlp")


class DivergenceError(RuntimeError):
    """Training loss blew past the divergence threshold."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture. ``widths`` includes the input and output sizes, e.g. ``(d, 64, 64, 1)``."""

    kind: str
    widths: tuple[int, ...]
    slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"invalid widths {self.widths}")
        if self.kind == "linear" and len(self.widths) != 2:
            raise ValueError("linear models take widths (d, 1)")
        if self.output_dim != (2 if self.kind == "quantile-mlp" else 1):
            raise ValueError(f"{self.kind} needs output width {2 if self.kind == 'quantile-mlp' else 1}")

    @classmethod
    def linear(cls, d: int) -> "ModelSpec":
        return cls("linear", (d, 1))

    @classmethod
    def mlp(cls, d: int, hidden=(64, 64), slope: float = 0.01) -> "ModelSpec":
        return cls("mlp", (d, *hidden, 1), slope)

    @classmethod
    def quantile(cls, d: int, hidden=(), slope: float = 0.01) -> "ModelSpec":
        return cls("quantile-mlp", (d, *hidden, 2), slope)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "widths": list(self.widths), "slope": self.slope}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["kind"], tuple(d["widths"]), float(d.get("slope", 0.01)))


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-2
    epochs: int = 200
    batch_size: int = 256
    clip: float | None = 10.0
    seed: int = 0
    method: str = "sgd"  # or "adam"
    decay: float = 0.0  # step size lr / (1 + decay * e) in local epoch e

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("step size must be positive")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")


def network(widths, slope, theta, x):
    """Fully connected leaky-relu network; last layer is affine."""
    h = x
    off = 0
    n_layers = len(widths) - 1
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        W = ad.reshape(ad.getitem(theta, slice(off, off + a * b)), (a, b))
        off += a * b
        bias = ad.getitem(theta, slice(off, off + b))
        off += b
        h = ad.matmul(h, W) + bias
        if k < n_layers - 1:
            h = ad.leaky_relu(h, slope)
    return h


def init_params(widths, seed: int) -> np.ndarray:
    """Scaled-uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for a, b in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(a)
        chunks.append(rng.uniform(-bound, bound, size=a * b))
        chunks.append(np.zeros(b))
    return np.concatenate(chunks)


@dataclass
class DiffModel:
    spec: ModelSpec
    params: np.ndarray
    history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {self.params.shape}")

    def apply(self, theta, x):
        """Model output as a function of ``theta`` (array or graph tensor).

        Returns shape (n,) for point models and (n, 2) ordered (lo, hi)
        pairs for the quantile head.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected {self.spec.input_dim} features, got {x.shape[1]}")
        out = network(self.spec.widths, self.spec.slope, theta, x)
        if self.spec.kind == "quantile-mlp":
            a, b = ad.getitem(out, (slice(None), 0)), ad.getitem(out, (slice(None), 1))
            # ties: column 0 is lo, column 1 is hi
            return ad.stack([ad.minimum(a, b), ad.maximum(b, a)], axis=1)
        return ad.reshape(out, (-1,))

    def forward(self, x) -> np.ndarray:
        return self.apply(self.params, x)

    __call__ = forward

    def with_params(self, params) -> "DiffModel":
        return DiffModel(self.spec, np.array(params, dtype=np.float64, copy=True))

    def to_dict(self) -> dict:
        return {
            "format": "kscp-model",
            "version": CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffModel":
        if d.get("format") != "kscp-model":
            raise ValueError("not a model checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        return cls(ModelSpec.from_dict(d["spec"]), np.asarray(d["params"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DiffModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init(spec: ModelSpec, seed: int = 0) -> DiffModel:
    """Seeded initialization. The quantile head starts with both output
    columns equal so the two quantile curves begin uncrossed."""
    params = init_params(spec.widths, seed)
    if spec.kind == "quantile-mlp":
        a = spec.widths[-2]
        W = params[-(a * 2 + 2):-2].reshape(a, 2)
        W[:, 1] = W[:, 0]
    return DiffModel(spec, params)


def forward(model: DiffModel, x) -> np.ndarray:
    return model.forward(x)


# objectives -----------------------------------------------------------------

def mse(pred, y):
    return ad.mean(ad.square(pred - y))


def pinball(y, q, tau: float):
    """Elementwise quantile loss max(tau (y - q), (tau - 1)(y - q))."""
    r = y - q
    return ad.maximum(tau * r, (tau - 1.0) * r)


def mse_objective(model: DiffModel, data: Dataset) -> Callable:
    if model.spec.output_dim != 1:
        raise ValueError("MSE needs a single-output model")

    def obj(theta, idx):
        return mse(model.apply(theta, data.x[idx]), data.y[idx])

    return obj


def pinball_objective(model: DiffModel, data: Dataset, a_lo: float, a_hi: float) -> Callable:
    if model.spec.output_dim != 2:
        raise ValueError("pinball training needs the two-output quantile head")
    if not 0 < a_lo <= a_hi < 1:
        raise ValueError("need 0 < a_lo <= a_hi < 1")

    def obj(theta, idx):
        out = model.apply(theta, data.x[idx])
        y = data.y[idx]
        lo, hi = ad.getitem(out, (slice(None), 0)), ad.getitem(out, (slice(None), 1))
        return ad.mean(pinball(y, lo, a_lo) + pinball(y, hi, a_hi))

    return obj


def gradient(model: DiffModel, objective: Callable, batch=None) -> np.ndarray:
    """Exact reverse-mode gradient of ``objective(theta, batch)`` at the model's parameters."""
    return ad.value_and_grad(lambda th: objective(th, batch), model.params)[1]


# training -------------------------------------------------------------------

def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle for one epoch; keyed on (seed, epoch) so runs can be resumed exactly."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def clip_by_norm(g: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return g
    norm = float(np.sqrt(np.dot(g, g)))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def descend(
    params: np.ndarray,
    objective: Callable,
    n: int,
    cfg: OptimizerConfig,
    epoch_offset: int = 0,
    on_epoch: Callable | None = None,
    diverge_at: float = 1e8,
) -> tuple[np.ndarray, list]:
    """Minibatch descent on ``objective(theta, idx)`` over ``n`` rows.

    ``on_epoch(epoch, theta)`` runs before each epoch and may return an
    objective replacing the current one. Returns the final parameters and
    the per-epoch mean losses.
    """
    theta = np.array(params, dtype=np.float64, copy=True)
    history = []
    m = v = None
    step = 0
    for e in range(cfg.epochs):
        epoch = epoch_offset + e
        if on_epoch is not None:
            objective = on_epoch(epoch, theta) or objective
        perm = epoch_permutation(cfg.seed, epoch, n)
        lr = cfg.lr / (1.0 + cfg.decay * e)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, g = ad.value_and_grad(lambda th: objective(th, idx), theta)
            if not math.isfinite(loss) or loss > diverge_at:
                raise DivergenceError(f"loss {loss:.4g} at epoch {epoch}, batch starting {start}")
            g = clip_by_norm(g, cfg.clip)
            step += 1
            if cfg.method == "adam":
                if m is None:
                    m, v = np.zeros_like(theta), np.zeros_like(theta)
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                theta = theta - lr * (m / (1 - 0.9 ** step)) / (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8)
            else:
                theta = theta - lr * g
            total += loss * len(idx)
        history.append(total / n)
    return theta, history


def fit(model: DiffModel, objective: Callable, n: int, cfg: OptimizerConfig, **kw) -> DiffModel:
    """Run :func:`descend` from the model's parameters; history is appended."""
    theta, history = descend(model.params, objective, n, cfg, **kw)
    out = model.with_params(theta)
    out.history = list(model.history) + history
    return out


def train_mse(model: DiffModel, train: Dataset, cfg: OptimizerConfig, epoch_offset: int = 0) -> DiffModel:
    return fit(model, mse_objective(model, train), train.n, cfg, epoch_offset=epoch_offset)


def train_pinball(model: DiffModel, train: Dataset, a_lo: float, a_hi: float, cfg: OptimizerConfig,
                  epoch_offset: int = 0) -> DiffModel:
    return fit(model, pinball_objective(model, train, a_lo, a_hi), train.n, cfg, epoch_offset=epoch_offset)


def default_optimizer(spec: ModelSpec, **overrides) -> OptimizerConfig:
    lr = 1e-2 if len(spec.widths) == 2 else 1e-3
    return replace(OptimizerConfig(lr=lr), **overrides)
