"""
Discrete-time survival networks
===============================

The same encoder with three output heads: a softmax PMF trained by
likelihood, DeepHit (likelihood plus ranking loss) and a logistic-hazard
network.
"""

import numpy as np

from fairsurv import TrainConfig, build_time_grid, split_by_subject, train
from fairsurv.core import kaplan_meier_censoring
from fairsurv.harness import clip_to_grid
from fairsurv.metrics import c_index_td, default_integration_range, ibs
from fairsurv.scm import SCMConfig, generate

data, _ = generate(SCMConfig(), 3000, seed=0)
tr, va, te = split_by_subject(data, (0.6, 0.2, 0.2), seed=0)

# ten intervals at quantiles of the training times
grid = build_time_grid(tr.time, 10)
# censored records in the last interval would have an empty likelihood tail
tr, va = clip_to_grid(tr, grid), clip_to_grid(va, grid)
print("cut points:", np.round(grid.cut_points, 2))

km = kaplan_meier_censoring(tr)
span = default_integration_range(tr.time)
cfg = TrainConfig(epochs=20, learning_rate=1e-3, seed=0)
for kind in ("pmf", "deephit", "nnet"):
    model, trace = train(kind, tr, va, grid, cfg)
    curves = model.predict_survival_curve(te.features)
    print(f"{kind:8s} best epoch {trace.best_epoch:2d}  val loss {min(trace.val_loss):.4f}  "
          f"test Ctd {c_index_td(curves, te):.4f}  IBS {ibs(curves, te, km, span, grid):.4f}")

# curves are step functions on the grid; a time inside an interval reads its end
print("first test curve:", np.round(curves.values[0], 3))
