"""
Scoring survival curves
=======================

Censoring curve, time-dependent concordance, AUC and integrated Brier score,
then the per-group view used for fairness.
"""

import numpy as np

from fairsurv import Dataset, SurvivalCurves, build_time_grid, kaplan_meier_censoring
from fairsurv.metrics import (auc_td, bootstrap_ci, c_index_td, default_integration_range, evaluate,
                              fairness_gap, ibs)

rng = np.random.default_rng(0)
n = 300

# exponential event times; group "1" is censored more often
group = rng.choice(["0", "1"], n, p=[0.6, 0.4])
risk = rng.normal(size=n)
T = rng.exponential(np.exp(-risk))
C = rng.exponential(np.where(group == "1", 0.8, 2.0))
data = Dataset([f"p{i}" for i in range(n)], risk[:, None], np.minimum(T, C), (T <= C).astype(int), group,
               ("0", "1"))
print("censoring rate by group:", {g: round(float(1 - data.event[data.group == g].mean()), 3) for g in "01"})

# Kaplan-Meier estimate of P(C > t), used for inverse-probability weights
km = kaplan_meier_censoring(data)
print("P(C > 1) =", round(km(1.0), 3))

# a noisy oracle: exponential survival with the true rate plus noise, on a
# fine time axis. Curves read on a coarse axis tie for every early event
# (all equal 1) and ties count against concordance.
grid = build_time_grid(data.time, 10)
rate = np.exp(risk + 0.5 * rng.normal(size=n))
times = np.linspace(0, data.time.max(), 400)
curves = SurvivalCurves(times, np.exp(-rate[:, None] * times[None, :]))
coarse = SurvivalCurves(grid.cut_points, np.exp(-rate[:, None] * grid.cut_points[None, :]))
print("Ctd on the coarse axis:", round(c_index_td(coarse, data), 4))

rng_int = default_integration_range(data.time)
print("Ctd   =", round(c_index_td(curves, data), 4))
print("AUCtd =", round(auc_td(curves, data, km, rng_int, grid), 4))
print("IBS   =", round(ibs(curves, data, km, rng_int, grid), 4))

# everything at once, per group, with gaps and equity scaling
report = evaluate(curves, data, km, grid, rng_int)
for name, m in report.metrics.items():
    print(f"{name:6s} overall={m.overall:.4f} per group={ {g: round(v, 4) for g, v in m.per_group.items()} } "
          f"gap={m.gap:.4f} ES={m.equity_scaling:.4f}")
print("gap by hand:", round(fairness_gap(report.metrics["ctd"].per_group), 4))

# percentile bootstrap of the concordance
ci = bootstrap_ci(lambda d, c: c_index_td(c, d), data, curves, 200, seed=1)
print(f"Ctd 95% interval: [{ci.lower:.4f}, {ci.upper:.4f}]")
