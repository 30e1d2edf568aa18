"""
Split conformal intervals on noise-only data
============================================

A linear model is fit to pure N(0, 1) noise, calibrated on a held-out split
and checked on fresh test points. With nothing to learn, the residual
threshold should land near the 90% two-sided normal quantile.
"""

import numpy as np
from scipy.stats import norm

from kscp import calibrate, conformal_quantile, gen_setting_two, split
from kscp.evaluate import conditional_coverage_synthetic, marginal_coverage
from kscp.models import ModelSpec, default_optimizer, init, train_mse

# the threshold is an order statistic of the calibration scores
print("q* of 1..10 at alpha=0.1:", conformal_quantile(np.arange(1, 11), 0.1))
print("q* of 5 scores at alpha=0.1:", conformal_quantile(np.arange(5), 0.1), "(too few points)")

splits = split(gen_setting_two(13_000, seed=0), n_train=2000, n_calib=1000, seed=0)
spec = ModelSpec.linear(1)
model = train_mse(init(spec, seed=0), splits.train, default_optimizer(spec))
print("fitted (weight, bias):", np.round(model.params, 3))

for alpha in (0.1, 0.2, 0.5):
    pred = calibrate(model, "residual", splits.calib, alpha)
    mc = marginal_coverage(pred, splits.test)
    cc = conditional_coverage_synthetic(pred, "setting-two")
    print(f"alpha={alpha}: q*={pred.q_star:.3f} (normal quantile {norm.ppf(1 - alpha / 2):.3f}), "
          f"test coverage {mc:.3f}, worst analytic coverage {cc:.3f}")

# one interval, spelled out
iv = calibrate(model, "residual", splits.calib, 0.1).predict_interval(np.array([[0.5]]))
print("interval at x=0.5:", (round(float(iv.lo[0]), 3), round(float(iv.hi[0]), 3)))
