"""Predictive metrics, group fairness gaps, equity scaling and bootstrap CIs.

Curves are evaluated as right-continuous step functions, so ``S(t | x)`` at
a time inside an interval equals the value at the interval's left cut.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import CensoringCurve, Dataset, SurvivalCurves, TimeGrid

METRICS = ("ctd", "auctd", "ibs")
HIGHER_IS_BETTER = {"ctd": True, "auctd": True, "ibs": False}
_CHUNK = 2048


class NoComparablePairsError(ValueError):
    def __init__(self, what="", context=None):
        self.context = context
        where = f" (group {context})" if context is not None else ""
        super().__init__(f"no comparable pairs for {what}{where}".strip())


@dataclass(frozen=True)
class IntegrationRange:
    t_min: float
    t_max: float

    def __post_init__(self):
        if not (np.isfinite(self.t_min) and np.isfinite(self.t_max)) or self.t_min >= self.t_max:
            raise ValueError(f"invalid integration range [{self.t_min}, {self.t_max}]")
        if self.t_min < 0:
            raise ValueError("integration range must start at or after 0")

    def check_grid(self, grid: TimeGrid):
        if self.t_max > grid.horizon:
            raise ValueError(f"integration range ends at {self.t_max}, past the grid horizon {grid.horizon}")


def default_integration_range(train_times, lower=10.0, upper=90.0) -> IntegrationRange:
    """Percentile range of the training times."""
    lo, hi = np.percentile(np.asarray(train_times, dtype=float), [lower, upper])
    return IntegrationRange(float(lo), float(hi))


def quadrature_points(grid: TimeGrid, rng: IntegrationRange) -> np.ndarray:
    inner = grid.cut_points[(grid.cut_points > rng.t_min) & (grid.cut_points < rng.t_max)]
    return np.concatenate([[rng.t_min], inner, [rng.t_max]])


# ----------------------------------------------------------------------------
# concordance


def _check_aligned(curves: SurvivalCurves, data: Dataset):
    if len(curves) != len(data):
        raise ValueError(f"{len(curves)} curves for {len(data)} records")


def c_index_td(curves: SurvivalCurves, data: Dataset, grid: Optional[TimeGrid] = None, context=None) -> float:
    """Fraction of comparable pairs ``(i, j)`` (``delta_i = 1``, ``y_i < y_j``)
    with ``S(y_i | x_i) < S(y_i | x_j)``. Ties count as discordant.
    """
    _check_aligned(curves, data)
    y, d = data.time, data.event
    cols = curves.column(y)
    own = curves.values[np.arange(len(y)), cols]
    concordant = total = 0
    for start in range(0, len(y), _CHUNK):
        rows = np.arange(start, min(start + _CHUNK, len(y)))
        rows = rows[d[rows] == 1]
        if rows.size == 0:
            continue
        comp = y[rows][:, None] < y[None, :]
        other = curves.values[:, cols[rows]].T
        total += int(comp.sum())
        concordant += int(np.sum(comp & (own[rows][:, None] < other)))
    if total == 0:
        raise NoComparablePairsError("Ctd", context)
    return concordant / total


@dataclass
class WeightTally:
    """Pairs or terms dropped because the censoring curve was 0."""
    excluded: int = 0


def auc_td_at(curves: SurvivalCurves, data: Dataset, t: float, censoring: CensoringCurve,
              tally: Optional[WeightTally] = None, context=None) -> float:
    """IPCW time-dependent AUC at ``t``.

    Pairs ``(i, j)`` with ``delta_i = 1, y_i <= t < y_j`` are weighted by
    ``1 / (Sc(y_i) Sc(t))``; a pair is concordant when
    ``S(t | x_i) < S(t | x_j)``.
    """
    _check_aligned(curves, data)
    y, d = data.time, data.event
    cases = (d == 1) & (y <= t)
    controls = y > t
    n_pairs = int(cases.sum()) * int(controls.sum())
    if n_pairs == 0:
        raise NoComparablePairsError(f"AUCtd at t={t}", context)
    sc_t = float(censoring(t))
    sc_y = np.asarray(censoring(y[cases]), dtype=float)
    valid = sc_y > 0 if sc_t > 0 else np.zeros(sc_y.shape, dtype=bool)
    if tally is not None:
        tally.excluded += int(np.sum(~valid)) * int(controls.sum())
    if not valid.any():
        raise NoComparablePairsError(f"AUCtd at t={t} (all weights undefined)", context)
    w = 1.0 / (sc_y[valid] * sc_t)
    s = curves.at(t)
    s_case = s[cases][valid]
    s_ctrl = np.sort(s[controls])
    # number of controls with strictly larger survival than each case
    wins = s_ctrl.size - np.searchsorted(s_ctrl, s_case, side="right")
    return float(np.sum(w * wins) / (np.sum(w) * s_ctrl.size))


def brier_score_at(curves: SurvivalCurves, data: Dataset, t: float, censoring: CensoringCurve,
                   tally: Optional[WeightTally] = None) -> float:
    """IPCW Brier score at ``t``, averaged over all records.

    Events by ``t`` contribute ``S(t|x)^2 / Sc(y)``; records still at risk
    contribute ``(1 - S(t|x))^2 / Sc(t)``; censored-by-``t`` records add 0.
    Terms whose weight is undefined (zero censoring survival) are dropped
    and counted in ``tally``.
    """
    _check_aligned(curves, data)
    y, d = data.time, data.event
    s = curves.at(t)
    total = np.zeros(len(y))
    dead = (d == 1) & (y <= t)
    sc_y = np.asarray(censoring(y[dead]), dtype=float)
    ok = sc_y > 0
    total[np.flatnonzero(dead)[ok]] = s[dead][ok] ** 2 / sc_y[ok]
    alive = y > t
    sc_t = float(censoring(t))
    dropped = int(np.sum(~ok))
    if sc_t > 0:
        total[alive] = (1.0 - s[alive]) ** 2 / sc_t
    else:
        dropped += int(alive.sum())
    if tally is not None:
        tally.excluded += dropped
    return float(total.sum() / len(y))


def _trapezoid_average(points, values):
    points, values = np.asarray(points), np.asarray(values)
    if points.size == 1:
        return float(values[0])
    span = points[-1] - points[0]
    return float(np.sum((values[1:] + values[:-1]) * np.diff(points)) / 2.0 / span)


def ibs(curves: SurvivalCurves, data: Dataset, censoring: CensoringCurve, rng: IntegrationRange,
        grid: TimeGrid, tally: Optional[WeightTally] = None) -> float:
    """Trapezoid-rule average of the Brier score over ``rng``.

    Nodes are ``t_min``, the grid cuts strictly inside the range and ``t_max``.
    """
    rng.check_grid(grid)
    pts = quadrature_points(grid, rng)
    bs = [brier_score_at(curves, data, t, censoring, tally) for t in pts]
    return _trapezoid_average(pts, bs)


def auc_td(curves: SurvivalCurves, data: Dataset, censoring: CensoringCurve, rng: IntegrationRange,
           grid: TimeGrid, tally: Optional[WeightTally] = None, context=None) -> float:
    """Trapezoid-rule average of AUCtd(t) over ``rng``.

    Nodes where AUCtd is undefined are dropped and the average is taken over
    the span the remaining nodes cover.
    """
    rng.check_grid(grid)
    pts, vals = [], []
    for t in quadrature_points(grid, rng):
        try:
            vals.append(auc_td_at(curves, data, t, censoring, tally, context))
            pts.append(t)
        except NoComparablePairsError:
            continue
    if not pts:
        raise NoComparablePairsError("AUCtd over the integration range", context)
    return _trapezoid_average(pts, vals)


# ----------------------------------------------------------------------------
# fairness


def fairness_gap(per_group: dict) -> float:
    """Largest absolute difference between any two defined group values."""
    vals = [v for v in per_group.values() if v is not None and np.isfinite(v)]
    if len(vals) < 2:
        raise ValueError("a fairness gap needs at least two groups with defined values")
    return float(max(vals) - min(vals))


def equity_scaling(overall: float, per_group: dict, metric_kind: str) -> float:
    vals = [v for v in per_group.values() if v is not None]
    spread = sum(abs(overall - v) for v in vals)
    numerator = 1.0 - overall if metric_kind == "ibs" else overall
    return float(numerator / (1.0 + spread))


def curve_distance(curves_a: SurvivalCurves, curves_b: SurvivalCurves) -> float:
    """Mean over records of the mean absolute curve difference at the jump times.

    A pseudo-metric on predictors for a fixed dataset: symmetric and
    satisfying the triangle inequality.
    """
    if curves_a.values.shape != curves_b.values.shape:
        raise ValueError("curve batches must have the same shape")
    return float(np.mean(np.abs(curves_a.values - curves_b.values)))


# ----------------------------------------------------------------------------
# bootstrap


@dataclass
class BootstrapCI:
    lower: float
    upper: float
    n_skipped: int
    n_resamples: int
    reliable: bool

    def __iter__(self):
        return iter((self.lower, self.upper))


def bootstrap_ci(metric_evaluator: Callable[[Dataset, SurvivalCurves], float], data: Dataset,
                 curves: SurvivalCurves, B: int = 1000, seed: int = 0, level: float = 0.95) -> BootstrapCI:
    """Percentile CI over ``B`` resamples of records drawn with replacement.

    Resamples where the evaluator raises ``ValueError`` are skipped. The CI is
    flagged unreliable when more than half were skipped.
    """
    if B < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    n = len(data)
    draws = np.random.default_rng(seed).integers(0, n, size=(B, n))
    values = []
    for idx in draws:
        try:
            values.append(metric_evaluator(data.subset(idx), curves[idx]))
        except ValueError:
            continue
    skipped = B - len(values)
    if not values:
        return BootstrapCI(float("nan"), float("nan"), skipped, B, False)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(float(lo), float(hi), skipped, B, skipped <= B / 2)


# ----------------------------------------------------------------------------
# reports


@dataclass
class MetricSummary:
    overall: Optional[float]
    per_group: dict
    gap: Optional[float]
    equity_scaling: Optional[float]
    undefined_groups: list = field(default_factory=list)
    excluded_weights: int = 0
    ci: Optional[dict] = None
    group_ci: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    metrics: dict
    group_sizes: dict
    integration_range: tuple
    overflow: int = 0

    def to_dict(self) -> dict:
        return {
            "metrics": {k: asdict(v) for k, v in self.metrics.items()},
            "group_sizes": dict(self.group_sizes),
            "integration_range": list(self.integration_range),
            "overflow": self.overflow,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls({k: MetricSummary(**v) for k, v in d["metrics"].items()}, d["group_sizes"],
                   tuple(d["integration_range"]), d.get("overflow", 0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def rows(self, **key) -> list:
        """Flat rows, one per metric, prefixed with ``key`` columns."""
        out = []
        for name, m in self.metrics.items():
            row = dict(key)
            row.update(metric=name, overall=m.overall, gap=m.gap, equity_scaling=m.equity_scaling)
            for g, v in m.per_group.items():
                row[f"group_{g}"] = v
            if m.ci:
                row["ci_lower"], row["ci_upper"] = m.ci["lower"], m.ci["upper"]
            out.append(row)
        return out


def _metric_fn(name, censoring, rng, grid):
    if name == "ctd":
        return lambda c, d, ctx=None: c_index_td(c, d, grid, ctx)
    if name == "auctd":
        return lambda c, d, ctx=None, tally=None: auc_td(c, d, censoring, rng, grid, tally, ctx)
    return lambda c, d, ctx=None, tally=None: ibs(c, d, censoring, rng, grid, tally)


def evaluate(curves: SurvivalCurves, data: Dataset, censoring: CensoringCurve, grid: TimeGrid,
             rng: IntegrationRange, metrics=METRICS, bootstrap: int = 0, seed: int = 0) -> EvalReport:
    """Overall and per-group metrics with gaps and equity scaling.

    Groups where a metric is undefined are listed in ``undefined_groups`` and
    left out of the gap.
    """
    _check_aligned(curves, data)
    summaries = {}
    for name in metrics:
        fn = _metric_fn(name, censoring, rng, grid)
        tally = WeightTally()
        kwargs = {} if name == "ctd" else {"tally": tally}
        try:
            overall = fn(curves, data, None, **kwargs)
        except NoComparablePairsError:
            overall = None
        per_group, undefined = {}, []
        for g in data.attribute_domain:
            idx = np.flatnonzero(data.group_mask(g))
            try:
                per_group[g] = fn(curves[idx], data.subset(idx), g, **kwargs) if idx.size else None
            except NoComparablePairsError:
                per_group[g] = None
            if per_group[g] is None:
                undefined.append(g)
        defined = {g: v for g, v in per_group.items() if v is not None}
        gap = fairness_gap(defined) if len(defined) >= 2 else None
        es = equity_scaling(overall, defined, name) if overall is not None else None
        summary = MetricSummary(overall, per_group, gap, es, undefined, tally.excluded)
        if bootstrap:
            ci = bootstrap_ci(lambda d, c: fn(c, d), data, curves, bootstrap, seed)
            summary.ci = asdict(ci)
            for g in defined:
                idx = np.flatnonzero(data.group_mask(g))
                summary.group_ci[g] = asdict(bootstrap_ci(lambda d, c: fn(c, d), data.subset(idx),
                                                          curves[idx], bootstrap, seed))
        summaries[name] = summary
    return EvalReport(summaries, data.group_sizes(), (rng.t_min, rng.t_max), grid.overflow(data.time))
