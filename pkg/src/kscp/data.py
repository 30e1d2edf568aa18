"""Datasets: synthetic generators, CSV ingestion, splitting and scaling.

All randomness goes through ``numpy.random.default_rng`` (PCG64), which is
portable across platforms, so a given ``(n, seed)`` always produces the
same bytes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

X_LOW, X_HIGH = -1.5, 2.5
SUBGROUP = (2.0, 2.2)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``x`` of shape (n, d) and target vector ``y`` of shape (n,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or y.ndim != 1:
            raise ValueError(f"expected x of shape (n, d) and y of shape (n,), got {x.shape} and {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"row count mismatch: x has {x.shape[0]}, y has {y.shape[0]}")
        if x.shape[1] < 1:
            raise ValueError("dataset needs at least one feature column")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    calib: Dataset
    test: Dataset


@dataclass(frozen=True)
class Standardizer:
    """Affine scaling fitted on the training split (population std)."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def transform(self, ds: Dataset) -> Dataset:
        return Dataset((ds.x - self.x_mean) / self.x_std, (ds.y - self.y_mean) / self.y_std)

    def inverse(self, ds: Dataset) -> Dataset:
        return Dataset(ds.x * self.x_std + self.x_mean, ds.y * self.y_std + self.y_mean)

    def inverse_y(self, y):
        return np.asarray(y) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["x_mean"], float), np.asarray(d["x_std"], float), float(d["y_mean"]), float(d["y_std"]))


def setting_one_mean(x):
    """Conditional mean of the Setting I target: 0 on the subgroup, 2 elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    inside = (x >= SUBGROUP[0]) & (x <= SUBGROUP[1])
    return np.where(inside, 0.0, 2.0)


def setting_two_mean(x):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def gen_setting_one(n: int, seed: int) -> Dataset:
    """X ~ U[-1.5, 2.5]; Y = eps on [2, 2.2] and 2 + eps elsewhere, eps ~ N(0, 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(X_LOW, X_HIGH, size=n)
    eps = rng.standard_normal(n)
    return Dataset(x[:, None], setting_one_mean(x) + eps)


def gen_setting_two(n: int, seed: int) -> Dataset:
    """X ~ U[-1.5, 2.5]; Y = eps independent of X."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(X_LOW, X_HIGH, size=n)
    eps = rng.standard_normal(n)
    return Dataset(x[:, None], eps)


GENERATORS = {"setting-one": gen_setting_one, "setting-two": gen_setting_two}
MEANS = {"setting-one": setting_one_mean, "setting-two": setting_two_mean}


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a comma-separated file.

    Errors name the offending (1-based, header excluded) row and column.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty dataset") from None
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: non-numeric cell {cell!r} at row {r}, column {name!r}") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    return header, np.asarray(rows, dtype=np.float64)


def load_csv(path, target_column: str, drop=()) -> Dataset:
    """Read a headered numeric CSV; features are every column other than the target and ``drop``."""
    header, table = read_table(path)
    for name in (target_column, *drop):
        if name not in header:
            raise ValueError(f"{path}: column {name!r} not in header {header}")
    t = header.index(target_column)
    skip = {t, *(header.index(c) for c in drop)}
    feats = [i for i in range(len(header)) if i not in skip]
    if not feats:
        raise ValueError(f"{path}: no feature columns besides the target")
    return Dataset(table[:, feats], table[:, t])


def read_column(path, name: str) -> np.ndarray:
    header, table = read_table(path)
    if name not in header:
        raise ValueError(f"{path}: column {name!r} not in header {header}")
    return table[:, header.index(name)]


def split(ds: Dataset, n_train: int, n_calib: int, seed: int) -> DataSplits:
    """Seeded random partition into train / calibration / test (the remainder)."""
    if n_train + n_calib > ds.n:
        raise ValueError(f"n_train + n_calib = {n_train + n_calib} exceeds dataset size {ds.n}")
    if n_train < 2 or n_calib < 2:
        raise ValueError("train and calibration splits need at least 2 rows each")
    perm = np.random.default_rng(seed).permutation(ds.n)
    tr, ca, te = perm[:n_train], perm[n_train:n_train + n_calib], perm[n_train + n_calib:]
    if te.size == 0:
        warnings.warn("test split is empty", stacklevel=2)
    return DataSplits(ds.subset(tr), ds.subset(ca), ds.subset(te))


def split_fractions(ds: Dataset, train: float, calib: float, seed: int) -> DataSplits:
    n_train = int(round(train * ds.n))
    n_calib = int(round(calib * ds.n))
    return split(ds, n_train, n_calib, seed)


def fit_standardizer(train: Dataset) -> Standardizer:
    if train.n == 0:
        raise ValueError("cannot standardize on an empty training split")
    x_std = train.x.std(axis=0)
    # constant columns pass through untouched
    x_mean = np.where(x_std > 0, train.x.mean(axis=0), 0.0)
    x_std = np.where(x_std > 0, x_std, 1.0)
    y_std = float(train.y.std())
    y_mean = float(train.y.mean()) if y_std > 0 else 0.0
    return Standardizer(x_mean, x_std, y_mean, y_std if y_std > 0 else 1.0)


def standardize(splits: DataSplits) -> tuple[DataSplits, Standardizer]:
    """Scale all splits with statistics fit on ``splits.train`` only."""
    st = fit_standardizer(splits.train)
    out = DataSplits(st.transform(splits.train), st.transform(splits.calib), st.transform(splits.test))
    return out, st
