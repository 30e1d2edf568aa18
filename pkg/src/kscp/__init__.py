"""Conformal prediction with KS-regularized training for conditional coverage."""

from .conformal import CalibratedPredictor, calibrate, conformal_quantile
from .data import Dataset, DataSplits, gen_setting_one, gen_setting_two, load_csv, split
from .ksreg import KSConfig, OQRConfig, train_coqr, train_kscp
from .models import ModelSpec, OptimizerConfig

__all__ = [
    "CalibratedPredictor",
    "Dataset",
    "DataSplits",
    "KSConfig",
    "ModelSpec",
    "OQRConfig",
    "OptimizerConfig",
    "calibrate",
    "conformal_quantile",
    "gen_setting_one",
    "gen_setting_two",
    "load_csv",
    "split",
    "train_coqr",
    "train_kscp",
]
