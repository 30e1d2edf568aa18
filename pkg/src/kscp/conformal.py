"""Split-conformal calibration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cde import load_cde
from .data import Dataset
from .models import DiffModel
from .scores import Intervals, check_kind, invert, score

PREDICTOR_VERSION = 1


def order_index(n: int, alpha: float, rule: str = "ceil") -> int:
    """1-based rank k of the calibration score used as threshold.

    ``ceil``: k = ceil((n + 1)(1 - alpha)), which carries the finite-sample
    guarantee. ``floor``: k = floor((n + 1)(1 - alpha)), the literal
    alternative some texts print.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    t = (n + 1) * (1 - alpha)
    # guard against (n+1)(1-alpha) landing a hair above an integer
    t_round = round(t)
    if abs(t - t_round) < 1e-9:
        t = t_round
    if rule == "ceil":
        return int(math.ceil(t))
    if rule == "floor":
        return int(math.floor(t))
    raise ValueError(f"unknown quantile rule {rule!r}")


def conformal_quantile(scores, alpha: float, rule: str = "ceil") -> float:
    """k-th smallest score, or +inf when k > n (no finite threshold suffices)."""
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = s.size
    if n < 1:
        raise ValueError("need at least one calibration score")
    k = order_index(n, alpha, rule)
    if k > n:
        return math.inf
    if k < 1:
        return -math.inf
    return float(s[k - 1])


def coverage_band(alpha: float, n_calib: int, tol: float = 0.01) -> tuple[float, float]:
    """Range the mean test coverage of a split-conformal set should fall in.

    Exact coverage lies in [1 - alpha, 1 - alpha + 1/(n+1)]; ``tol`` absorbs
    Monte-Carlo error of the estimate.
    """
    return 1 - alpha - tol, 1 - alpha + 1.0 / (n_calib + 1) + tol


def in_coverage_band(mean_coverage: float, alpha: float, n_calib: int, tol: float = 0.01) -> bool:
    lo, hi = coverage_band(alpha, n_calib, tol)
    return lo <= mean_coverage <= hi


@dataclass
class CalibratedPredictor:
    """A frozen model plus threshold: C(x) = {y : V(x, y) <= q_star}."""

    model: DiffModel
    kind: str
    q_star: float
    alpha: float
    n_calib: int
    cde: object = None
    calib_scores: np.ndarray | None = None
    rule: str = "ceil"
    method: str = "CP"

    def __post_init__(self):
        check_kind(self.kind)
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.kind == "normalized" and self.cde is None:
            raise ValueError("normalized score needs a conditional density model")
        if self.kind == "quantile" and self.model.spec.output_dim != 2:
            raise ValueError("quantile score needs the two-output quantile head")

    def prediction(self, x) -> np.ndarray:
        return self.model.forward(x)

    def sigma(self, x):
        return self.cde.cond_std(x) if self.kind == "normalized" else None

    def point(self, x):
        """Point prediction for MSE reporting; None for the quantile head."""
        return None if self.kind == "quantile" else self.model.forward(x)

    def scores(self, x, y) -> np.ndarray:
        return score(self.kind, self.prediction(x), np.asarray(y, dtype=np.float64), self.sigma(x))

    def predict_interval(self, x) -> Intervals:
        return invert(self.kind, self.prediction(x), self.q_star, self.sigma(x))

    def covers(self, x, y) -> np.ndarray:
        if math.isinf(self.q_star) and self.q_star > 0:
            return np.ones(np.shape(y), dtype=bool)
        return self.scores(x, y) <= self.q_star

    def with_alpha(self, alpha: float) -> "CalibratedPredictor":
        """Recalibrate at another level from the stored calibration scores."""
        if self.calib_scores is None:
            raise ValueError("no stored calibration scores")
        return replace(self, alpha=alpha, q_star=conformal_quantile(self.calib_scores, alpha, self.rule))

    def to_dict(self) -> dict:
        return {
            "format": "kscp-predictor",
            "version": PREDICTOR_VERSION,
            "method": self.method,
            "kind": self.kind,
            "q_star": self.q_star if math.isfinite(self.q_star) else repr(self.q_star),
            "alpha": self.alpha,
            "n_calib": self.n_calib,
            "rule": self.rule,
            "model": self.model.to_dict(),
            "cde": None if self.cde is None else self.cde.to_dict(),
            "calib_scores": None if self.calib_scores is None else self.calib_scores.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedPredictor":
        if d.get("format") != "kscp-predictor":
            raise ValueError("not a predictor file")
        if d.get("version") != PREDICTOR_VERSION:
            raise ValueError(f"unsupported predictor version {d.get('version')}")
        return cls(
            model=DiffModel.from_dict(d["model"]),
            kind=d["kind"],
            q_star=float(d["q_star"]),
            alpha=float(d["alpha"]),
            n_calib=int(d["n_calib"]),
            cde=None if d["cde"] is None else load_cde(d["cde"]),
            calib_scores=None if d["calib_scores"] is None else np.asarray(d["calib_scores"], float),
            rule=d.get("rule", "ceil"),
            method=d.get("method", "CP"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "CalibratedPredictor":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate(model: DiffModel, kind: str, calib: Dataset, alpha: float, cde=None, rule: str = "ceil",
              method: str = "CP") -> CalibratedPredictor:
    """Score the calibration split with the frozen model and take the conformal quantile."""
    if calib.n < 1:
        raise ValueError("empty calibration set")
    pred = CalibratedPredictor(model, kind, math.inf, alpha, calib.n, cde, None, rule, method)
    s = np.sort(pred.scores(calib.x, calib.y))
    pred.calib_scores = s
    pred.q_star = conformal_quantile(s, alpha, rule)
    return pred


def predict_interval(pred, x) -> Intervals:
    return pred.predict_interval(x)


def covers(pred, x, y) -> np.ndarray:
    return pred.covers(x, y)


@dataclass
class FixedBandPredictor:
    """Uncalibrated band [lo(x), hi(x)] straight from a quantile model (raw OQR)."""

    model: DiffModel
    alpha: float
    method: str = "OQR"
    kind: str = "quantile"
    q_star: float = 0.0

    def point(self, x):
        return None

    def predict_interval(self, x) -> Intervals:
        return invert("quantile", self.model.forward(x), 0.0)

    def covers(self, x, y) -> np.ndarray:
        return self.predict_interval(x).contains(y)


@dataclass
class GenerativePredictor:
    """Central 1 - alpha region of conditional draws from a density model; no calibration."""

    cde: object
    alpha: float
    n_samples: int = 1000
    seed: int = 0
    method: str = "CDE"
    kind: str = "NA"
    q_star: float = 0.0

    def point(self, x):
        return self.cde.cond_mean(x)

    def predict_interval(self, x) -> Intervals:
        draws = self.cde.sample(np.asarray(x, dtype=np.float64).reshape(len(x), -1), self.n_samples,
                                self.seed)
        lo, hi = np.quantile(draws, [self.alpha / 2, 1 - self.alpha / 2], axis=1)
        return Intervals(lo, hi, np.zeros(lo.shape, bool))

    def covers(self, x, y) -> np.ndarray:
        return self.predict_interval(x).contains(y)
