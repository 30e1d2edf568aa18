"""
Quantile scores: OQR, COQR and KS-CP
====================================

A two-output head predicts lower and upper quantiles. Orthogonal quantile
regression adds a penalty on the correlation between coverage and interval
length; COQR then calibrates that band conformally. The quantile-score
KS-CP run uses the same head with the KS penalty. Takes about a minute.
"""

from kscp import KSConfig, OQRConfig, gen_setting_one, split, train_coqr, train_kscp
from kscp.cde import fit_mdn
from kscp.conformal import FixedBandPredictor
from kscp.evaluate import summarize
from kscp.ksreg import train_oqr
from kscp.models import ModelSpec

splits = split(gen_setting_one(13_000, seed=3), 2000, 1000, seed=3)
spec = ModelSpec.quantile(1)

raw = FixedBandPredictor(train_oqr(splits, spec, OQRConfig(seed=3)), 0.1)
coqr = train_coqr(splits, spec, OQRConfig(seed=3))
ks = train_kscp(splits, spec, "quantile", KSConfig(seed=3), fit_mdn(splits.train, 5))

for name, pred in (("OQR", raw), ("COQR", coqr), ("KS-CP", ks)):
    rep = summarize(pred, splits, "setting-one", method=name)
    print(f"{name:>6}: coverage {rep.mc:.3f}, worst conditional {rep.cc:.3f}, "
          f"worst slab {rep.wslab:.3f}, size {rep.mean_set_size:.2f}")
