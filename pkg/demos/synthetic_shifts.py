"""
Synthetic data and distribution shifts
======================================

Draw from the structural model, then corrupt one group's features, times or
event indicators.
"""

import numpy as np

from fairsurv.scm import SCMConfig, apply_shift_delta, apply_shift_x, apply_shift_y, generate

cfg = SCMConfig(k_cens=1.0, k_tte=0.5)
data, latent = generate(cfg, 2000, seed=0)
print("features:", data.features.shape, "(X_Z columns", cfg.xz_columns[0], "-", cfg.xz_columns[-1], ")")
for g in ("0", "1"):
    m = data.group == g
    print(f"group {g}: n={m.sum()}  censored={1 - data.event[m].mean():.3f}  "
          f"median event time={np.median(data.time[m & (data.event == 1)]):.3f}")

# Y = min(T, C) and Delta = 1{T <= C} hold exactly
assert np.array_equal(data.time, np.minimum(latent.T, latent.C))

blurred = apply_shift_x(data, "1", kernel_width=1.0, columns=cfg.xz_columns)
noisy = apply_shift_y(data, "1", noise_halfwidth=2.0, seed=1)
flipped = apply_shift_delta(data, "1", flip_rate=0.9, seed=2)

g1 = data.group == "1"
print("x shift, mean change in group 1:", np.abs(blurred.features - data.features)[g1].mean().round(4),
      "group 0:", np.abs(blurred.features - data.features)[~g1].mean())
print("y shift, mean |dy| in group 1:", np.abs(noisy.time - data.time)[g1].mean().round(4))
print("delta shift, events in group 1:", data.event[g1].sum(), "->", flipped.event[g1].sum())
