"""
Saving a predictor and auditing it on a table
=============================================

Predictors are plain JSON. This script trains on a generated CSV through the
command line, reloads the saved predictor and audits it on a table carrying
a subgroup column: marginal coverage, worst-slab coverage and coverage
inside and outside the group.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from kscp.cli import main

rng = np.random.default_rng(4)
work = Path(tempfile.mkdtemp())
n = 2000
x = rng.normal(size=(n, 2))
group = (rng.random(n) < 0.15).astype(int)
y = 20 + 3 * x[:, 0] - x[:, 1] + rng.normal(size=n) * np.where(group == 1, 3.0, 1.0)
np.savetxt(work / "train.csv", np.column_stack([x, y]), delimiter=",", header="a,b,y", comments="", fmt="%.5f")
np.savetxt(work / "audit.csv", np.column_stack([x, group, y]), delimiter=",", header="a,b,g,y",
           comments="", fmt="%.5f")

pred = work / "cp.json"
main(["checkpoint", "save", "--csv", str(work / "train.csv"), "--target", "y", "--method", "CP",
      "--seed", "0", "--out", str(pred)])
main(["checkpoint", "load", str(pred)])
main(["audit", "--predictor", str(pred), "--csv", str(work / "audit.csv"), "--target", "y",
      "--subgroup", "g", "--standardizer", str(pred.with_suffix(".standardizer.json")),
      "--n-dirs", "200", "--out-dir", str(work / "audit")])
print(json.loads((work / "audit" / "subgroup.json").read_text()))
