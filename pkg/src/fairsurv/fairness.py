"""Fairness interventions around the base survival models, and model selection.

* SR  - upsample smaller groups to the size of the largest
* DRO - group distributionally robust training
* FRL - representation matching with an MMD penalty
* DI  - shared encoder with one head per group
* CSA - one independently trained model per group, curves averaged
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .core import Dataset, SurvivalCurves, TimeGrid
from .models import (
    TrainConfig,
    TrainingTrace,
    _batch,
    backward,
    base_objective,
    fit,
    forward,
    group_losses,
    init_model,
    model_from_dict,
    model_to_dict,
    standard_step,
    train,
    validate_training_set,
    weighted_group_objective,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("SR", "DRO", "FRL", "DI", "CSA")

# log10 search ranges
DRO_STEP_RANGE = (-3.0, -1.0)
FRL_WEIGHT_RANGE = (-5.0, 2.0)


class InsufficientGroupError(ValueError):
    def __init__(self, group, count, needed):
        self.group = group
        super().__init__(f"group {group!r} has {count} records; at least {needed} are needed")


@dataclass
class FairnessConfig:
    algorithm: str
    dro_step: Optional[float] = None
    frl_weight: Optional[float] = None
    mmd_bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm == "DRO":
            self.dro_step = 10 ** np.mean(DRO_STEP_RANGE) if self.dro_step is None else self.dro_step
            if self.dro_step < 0:
                raise ValueError("dro_step must be nonnegative")
        elif self.dro_step is not None:
            raise ValueError("dro_step only applies to DRO")
        if self.algorithm == "FRL":
            self.frl_weight = 1.0 if self.frl_weight is None else self.frl_weight
            if self.frl_weight < 0:
                raise ValueError("frl_weight must be nonnegative")
            if self.mmd_bandwidth is not None and self.mmd_bandwidth <= 0:
                raise ValueError("mmd_bandwidth must be positive")
        elif self.frl_weight is not None or self.mmd_bandwidth is not None:
            raise ValueError("frl_weight and mmd_bandwidth only apply to FRL")


def _require_groups(data: Dataset, minimum=1):
    sizes = data.group_sizes()
    empty = [g for g, c in sizes.items() if c == 0]
    if empty:
        raise InsufficientGroupError(empty[0], 0, minimum)
    return sizes


# ----------------------------------------------------------------------------
# SR


def rebalance_subgroups(train: Dataset, seed: int = 0) -> Dataset:
    """Upsample every group with replacement to the largest group's size.

    Originals keep their order; extra draws are appended group by group in
    attribute-domain order.
    """
    sizes = _require_groups(train)
    if len(sizes) < 2:
        raise ValueError("rebalancing needs at least two groups")
    target = max(sizes.values())
    rng = np.random.default_rng(seed)
    extra = []
    for g in train.attribute_domain:
        members = np.flatnonzero(train.group_mask(g))
        if members.size < target:
            extra.append(members[rng.integers(0, members.size, size=target - members.size)])
    if not extra:
        return train
    return train.subset(np.concatenate([np.arange(len(train))] + extra))


def train_sr(model_kind, train_data: Dataset, val, grid, config: TrainConfig):
    return train(model_kind, rebalance_subgroups(train_data, config.seed), val, grid, config)


# ----------------------------------------------------------------------------
# DRO


def train_group_dro(model_kind, train_data: Dataset, val, grid: TimeGrid, config: TrainConfig, eta: float):
    """Group DRO with multiplicative weights over groups.

    Each step updates ``q_a <- q_a exp(eta * loss_a)`` for the groups in the
    batch, renormalizes, and descends ``sum_a q_a loss_a``. The weight history
    is stored in ``trace.extra["group_weights"]``.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    validate_training_set(model_kind, train_data, grid)
    domain = train_data.attribute_domain
    q = np.full(len(domain), 1.0 / len(domain))
    trace = TrainingTrace(extra={"group_weights": [q.tolist()]})

    def step(model, idx, epoch):
        nonlocal q
        k0, e, heads = _batch(model, train_data, idx)
        out, cache = forward(model, train_data.features[idx], heads)
        found = group_losses(model_kind, out, k0, e, train_data.time[idx], train_data.group[idx], domain, config)
        for i, (_, la, _) in found.items():
            if not np.isfinite(la):
                raise FloatingPointError(f"non-finite loss {la} for group {domain[i]!r} at epoch {epoch}")
        if eta:
            for i, (_, la, _) in found.items():
                q[i] = q[i] * np.exp(eta * la)
            q = q / q.sum()
        trace.extra["group_weights"].append(q.tolist())
        loss, d_out = weighted_group_objective(found, q, out.shape)
        return loss, backward(model.params, cache, heads, d_out)

    model = init_model(model_kind, train_data.n_features, grid, config.hidden, config.seed)
    return fit(model, train_data, val, config, step, trace)


# ----------------------------------------------------------------------------
# FRL


def median_bandwidth(z) -> float:
    """Median pairwise Euclidean distance; 1.0 when all points coincide."""
    z = np.asarray(z, dtype=float)
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * z @ z.T, 0.0)
    iu = np.triu_indices(z.shape[0], 1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def _sq_dists(a, b):
    d = a[:, None, :] - b[None, :, :]
    return d, np.sum(d * d, axis=2)


def mmd2(x, y, bandwidth: float) -> float:
    """Biased (V-statistic) squared MMD with kernel ``exp(-|u-v|^2 / (2 h^2))``."""
    value, _, _ = mmd2_with_grad(x, y, bandwidth)
    return value


def mmd2_with_grad(x, y, bandwidth: float):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 0 or y.shape[0] == 0:
        return 0.0, np.zeros_like(x), np.zeros_like(y)
    s2 = bandwidth ** 2
    n, m = x.shape[0], y.shape[0]
    dxx, kxx = _sq_dists(x, x)
    dyy, kyy = _sq_dists(y, y)
    dxy, kxy = _sq_dists(x, y)
    kxx, kyy, kxy = np.exp(-kxx / (2 * s2)), np.exp(-kyy / (2 * s2)), np.exp(-kxy / (2 * s2))
    value = kxx.mean() + kyy.mean() - 2 * kxy.mean()
    gx = (-2.0 / (n * n * s2)) * np.einsum("ij,ijd->id", kxx, dxx) + (2.0 / (n * m * s2)) * np.einsum("ij,ijd->id", kxy, dxy)
    gy = (-2.0 / (m * m * s2)) * np.einsum("ij,ijd->id", kyy, dyy) - (2.0 / (n * m * s2)) * np.einsum("ij,ijd->jd", kxy, dxy)
    return float(value), gx, gy


def group_mmd_penalty(z, labels, domain, bandwidth=None):
    """Sum of MMD^2 over group pairs and its gradient w.r.t. ``z``."""
    h = median_bandwidth(z) if bandwidth is None else bandwidth
    total, grad = 0.0, np.zeros_like(z)
    rows = [np.flatnonzero(labels == a) for a in domain]
    for i in range(len(domain)):
        for j in range(i + 1, len(domain)):
            if rows[i].size == 0 or rows[j].size == 0:
                continue
            v, gi, gj = mmd2_with_grad(z[rows[i]], z[rows[j]], h)
            total += v
            grad[rows[i]] += gi
            grad[rows[j]] += gj
    return total, grad


def train_frl(model_kind, train_data: Dataset, val, grid: TimeGrid, config: TrainConfig, lam: float,
              bandwidth: Optional[float] = None):
    """Base loss plus ``lam`` times the summed pairwise group MMD^2 of the
    encoder output in each batch. ``bandwidth=None`` uses the per-batch
    median heuristic.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if lam == 0:
        return train(model_kind, train_data, val, grid, config)
    validate_training_set(model_kind, train_data, grid)
    domain = train_data.attribute_domain
    trace = TrainingTrace(extra={"mmd": []})

    def step(model, idx, epoch):
        k0, e, heads = _batch(model, train_data, idx)
        out, cache = forward(model, train_data.features[idx], heads)
        loss, d_out = base_objective(model_kind, out, k0, e, train_data.time[idx], config)
        pen, d_z = group_mmd_penalty(cache[-1], train_data.group[idx], domain, bandwidth)
        trace.extra["mmd"].append(pen)
        return loss + lam * pen, backward(model.params, cache, heads, d_out, lam * d_z)

    model = init_model(model_kind, train_data.n_features, grid, config.hidden, config.seed)
    return fit(model, train_data, val, config, step, trace)


# ----------------------------------------------------------------------------
# DI


def train_domain_independent(model_kind, train_data: Dataset, val, grid: TimeGrid, config: TrainConfig):
    """Shared encoder with one head per nonempty training group.

    Each record is fit through its own group's head; prediction averages the
    survival curves of all heads.
    """
    validate_training_set(model_kind, train_data, grid)
    groups = tuple(g for g, c in train_data.group_sizes().items() if c > 0)
    model = init_model(model_kind, train_data.n_features, grid, config.hidden, config.seed,
                       head_groups=groups if len(groups) > 1 else ())
    if val is not None and model.n_heads > 1:
        keep = np.isin(val.group, groups)
        val = val.subset(np.flatnonzero(keep))
    return fit(model, train_data, val, config, standard_step(model_kind, train_data, config))


# ----------------------------------------------------------------------------
# CSA


@dataclass
class EnsembleModel:
    """Per-group models whose survival curves are averaged with equal weight."""

    models: list
    groups: tuple

    @property
    def kind(self) -> str:
        return self.models[0].kind

    @property
    def grid(self) -> TimeGrid:
        return self.models[0].grid

    @property
    def n_features(self) -> int:
        return self.models[0].n_features

    def predict_survival_curve(self, x) -> SurvivalCurves:
        return SurvivalCurves.mean([m.predict_survival_curve(x) for m in self.models])

    def to_dict(self) -> dict:
        return {"format": "fairsurv-ensemble", "version": 1, "groups": list(self.groups),
                "models": [model_to_dict(m) for m in self.models]}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        return cls([model_from_dict(m) for m in d["models"]], tuple(d["groups"]))


def train_csa(model_kind, train_data: Dataset, val, grid: TimeGrid, config: TrainConfig):
    """One base model per group, each trained only on that group's records."""
    sizes = train_data.group_sizes()
    for g, c in sizes.items():
        if c < config.batch_size:
            raise InsufficientGroupError(g, c, config.batch_size)
    models, traces = [], {}
    for g in train_data.attribute_domain:
        part = train_data.subset(np.flatnonzero(train_data.group_mask(g)))
        val_part = None
        if val is not None:
            val_idx = np.flatnonzero(val.group_mask(g))
            val_part = val.subset(val_idx) if val_idx.size else None
        m, tr = train(model_kind, part, val_part, grid, config)
        models.append(m)
        traces[g] = tr
    return EnsembleModel(models, tuple(train_data.attribute_domain)), TrainingTrace(extra={"groups": traces})


def train_fair(model_kind, train_data: Dataset, val, grid: TimeGrid, config: TrainConfig,
               fairness: FairnessConfig):
    """Dispatch on ``fairness.algorithm``."""
    alg = fairness.algorithm
    if alg == "SR":
        return train_sr(model_kind, train_data, val, grid, config)
    if alg == "DRO":
        return train_group_dro(model_kind, train_data, val, grid, config, fairness.dro_step)
    if alg == "FRL":
        return train_frl(model_kind, train_data, val, grid, config, fairness.frl_weight, fairness.mmd_bandwidth)
    if alg == "DI":
        return train_domain_independent(model_kind, train_data, val, grid, config)
    return train_csa(model_kind, train_data, val, grid, config)


# ----------------------------------------------------------------------------
# model selection


@dataclass
class Candidate:
    utility: float
    fairness: float
    seed: int = 0
    key: str = ""
    payload: Any = None


@dataclass
class Selection:
    candidate: Candidate
    feasible: bool
    warning: Optional[str] = None


def select_model(candidates: Sequence[Candidate], base_utility: float, utility_metric: str = "ctd",
                 tolerance: float = 0.05) -> Selection:
    """Fairness-first selection within a utility tolerance of the base model.

    Feasible candidates have utility at least ``(1 - tolerance) * base`` (at
    most ``(1 + tolerance) * base`` for IBS). Among them the smallest
    fairness value wins; ties go to better utility, then lower seed, then key.
    With no feasible candidate the fairness-best overall is returned with a
    warning.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    lower_better = utility_metric == "ibs"

    def order(c):
        return (c.fairness, c.utility if lower_better else -c.utility, c.seed, c.key)

    if lower_better:
        feasible = [c for c in candidates if c.utility <= (1 + tolerance) * base_utility]
    else:
        feasible = [c for c in candidates if c.utility >= (1 - tolerance) * base_utility]
    if feasible:
        return Selection(min(feasible, key=order), True)
    return Selection(min(candidates, key=order), False,
                     "no candidate within the utility tolerance; returning the fairness-best overall")
