"""Nonconformity scores and their inversion into prediction intervals.

A *prediction* is what the frozen model says at x:

* ``residual`` -- point prediction ``f`` (shape (n,))
* ``normalized`` -- point prediction ``f`` plus ``sigma`` (shape (n,))
* ``quantile`` -- ordered pairs ``(lo, hi)`` (shape (n, 2))

The score functions are written with :mod:`kscp.autodiff` helpers, so they
accept either arrays or graph tensors for the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KINDS = ("residual", "normalized", "quantile")


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown score kind {kind!r}; expected one of {KINDS}")
    return kind


def score(kind: str, pred, y, sigma=None):
    """V(x, y) for each row.

    residual: |y - f|; normalized: |y - f| / sigma; quantile: max(lo - y, y - hi).
    """
    check_kind(kind)
    if kind == "residual":
        return ad.absolute(y - pred)
    if kind == "normalized":
        if sigma is None:
            raise ValueError("normalized score needs sigma(x)")
        if np.any(np.asarray(sigma) <= 0):
            raise ValueError("sigma(x) must be positive")
        return ad.absolute(y - pred) / sigma
    lo = ad.getitem(pred, (slice(None), 0)) if ad.is_tensor(pred) else np.asarray(pred)[..., 0]
    hi = ad.getitem(pred, (slice(None), 1)) if ad.is_tensor(pred) else np.asarray(pred)[..., 1]
    return ad.maximum(lo - y, y - hi)


@dataclass(frozen=True)
class Intervals:
    """Vectorized intervals. ``empty`` flags rows whose set is empty."""

    lo: np.ndarray
    hi: np.ndarray
    empty: np.ndarray

    def __len__(self) -> int:
        return self.lo.shape[0]

    def __getitem__(self, i) -> "Intervals":
        return Intervals(np.atleast_1d(self.lo[i]), np.atleast_1d(self.hi[i]), np.atleast_1d(self.empty[i]))

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return (~self.empty) & (self.lo <= y) & (y <= self.hi)

    @property
    def full_line(self) -> np.ndarray:
        return np.isneginf(self.lo) & np.isposinf(self.hi)


def invert(kind: str, pred, q_star: float, sigma=None) -> Intervals:
    """{y : V(x, y) <= q*} as intervals; q* = +inf gives the full line."""
    check_kind(kind)
    pred = np.asarray(pred, dtype=np.float64)
    if np.isposinf(q_star):
        n = pred.shape[0]
        return Intervals(np.full(n, -np.inf), np.full(n, np.inf), np.zeros(n, bool))
    if kind == "residual":
        lo, hi = pred - q_star, pred + q_star
    elif kind == "normalized":
        if sigma is None:
            raise ValueError("normalized score needs sigma(x)")
        s = np.asarray(sigma, dtype=np.float64)
        lo, hi = pred - s * q_star, pred + s * q_star
    else:
        lo, hi = pred[:, 0] - q_star, pred[:, 1] + q_star
    empty = lo > hi
    mid = 0.5 * (lo + hi)
    lo = np.where(empty, mid, lo)
    hi = np.where(empty, mid, hi)
    return Intervals(lo, hi, empty)


def set_size(iv: Intervals) -> np.ndarray:
    """hi - lo; 0 where empty; +inf for the full line."""
    with np.errstate(invalid="ignore"):
        size = iv.hi - iv.lo
    return np.where(iv.empty, 0.0, size)


def quantile_levels(alpha: float) -> tuple[float, float]:
    """Quantile-head levels for miscoverage alpha: (alpha/2, 1 - alpha/2)."""
    return alpha / 2.0, 1.0 - alpha / 2.0
