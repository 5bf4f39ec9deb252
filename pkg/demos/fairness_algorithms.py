"""
Fairness interventions
======================

Subgroup rebalancing (SR), group DRO, an MMD-penalized representation (FRL),
domain-independent heads (DI) and per-group ensembles (CSA), trained on data
where the minority group follows a different risk direction. Candidates are
then picked by the smallest gap among those close to the base model.
"""

import numpy as np

from fairsurv import FairnessConfig, TrainConfig, build_time_grid, select_model, split_by_subject, train, train_fair
from fairsurv.core import kaplan_meier_censoring
from fairsurv.fairness import Candidate
from fairsurv.harness import clip_to_grid
from fairsurv.metrics import default_integration_range, evaluate
from fairsurv.scm import SCMConfig, generate

data, _ = generate(SCMConfig(k_label=1.0), 4000, seed=1)
tr, va, te = split_by_subject(data, (0.6, 0.2, 0.2), seed=1)
grid = build_time_grid(tr.time, 10)
tr, va = clip_to_grid(tr, grid), clip_to_grid(va, grid)
km = kaplan_meier_censoring(tr)
span = default_integration_range(tr.time)
cfg = TrainConfig(epochs=20, seed=0)


def scores(model, split):
    rep = evaluate(model.predict_survival_curve(split.features), split, km, grid, span, ("ctd",))
    return rep.metrics["ctd"].overall, rep.metrics["ctd"].gap


base, _ = train("deephit", tr, va, grid, cfg)
base_val = scores(base, va)
print(f"base     test Ctd {scores(base, te)[0]:.4f}  gap {scores(base, te)[1]:.4f}")

candidates = []
for alg, extra in (("SR", {}), ("DRO", {"dro_step": 0.01}), ("FRL", {"frl_weight": 1.0}), ("DI", {}),
                   ("CSA", {})):
    model, trace = train_fair("deephit", tr, va, grid, cfg, FairnessConfig(alg, **extra))
    u, f = scores(model, va)
    candidates.append(Candidate(u, f, key=alg, payload=model))
    tu, tf = scores(model, te)
    print(f"{alg:8s} test Ctd {tu:.4f}  gap {tf:.4f}")

# keep candidates within 5% of the base validation Ctd, then take the smallest gap
choice = select_model(candidates, base_val[0], "ctd", 0.05)
print("selected:", choice.candidate.key, "(feasible)" if choice.feasible else f"({choice.warning})")
