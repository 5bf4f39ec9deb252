"""Censored time-to-event data: datasets, time grids, survival curves,
the Kaplan-Meier censoring estimator and subject-level splitting."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    features: np.ndarray
    time: float
    event: int
    group: str


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of censored observations.

    Parameters
    ----------
    subject_id : (n,) array of str
        Subject identifiers. A subject may own several records.
    features : (n, d) float array
    time : (n,) float array
        Observed time ``y = min(T, C)``.
    event : (n,) int array
        1 when the event was observed, 0 when censored.
    group : (n,) array of str
        Sensitive attribute label of each record.
    attribute_domain : tuple of str
        Every declared group label. Labels with no records are kept.
    """

    subject_id: np.ndarray
    features: np.ndarray
    time: np.ndarray
    event: np.ndarray
    group: np.ndarray
    attribute_domain: tuple = ()

    def __post_init__(self):
        sid = _frozen(np.asarray(self.subject_id).astype(str))
        feats = _frozen(np.atleast_2d(np.asarray(self.features, dtype=float)))
        if feats.shape[0] != sid.shape[0] and sid.shape[0] == 0:
            feats = _frozen(np.zeros((0, feats.shape[1])))
        time = _frozen(self.time, dtype=float)
        event = _frozen(self.event, dtype=np.int64)
        group = _frozen(np.asarray(self.group).astype(str))
        n = sid.shape[0]
        if not (feats.shape[0] == time.shape[0] == event.shape[0] == group.shape[0] == n):
            raise ValueError("all columns must have the same number of records")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise ValueError("observed times must be finite and nonnegative")
        if not np.all(np.isin(event, (0, 1))):
            raise ValueError("event indicators must be 0 or 1")
        domain = tuple(str(a) for a in self.attribute_domain) or tuple(sorted(set(group.tolist())))
        unknown = set(group.tolist()) - set(domain)
        if unknown:
            raise ValueError(f"groups {sorted(unknown)} are not in the attribute domain {domain}")
        for name, value in (("subject_id", sid), ("features", feats), ("time", time),
                            ("event", event), ("group", group), ("attribute_domain", domain)):
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return self.time.shape[0]

    def __iter__(self) -> Iterator[SurvivalRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(self.subject_id[i], self.features[i], float(self.time[i]),
                              int(self.event[i]), self.group[i])

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        """Rows selected by an index array or boolean mask; the domain is kept."""
        idx = np.asarray(idx)
        return Dataset(self.subject_id[idx], self.features[idx], self.time[idx],
                       self.event[idx], self.group[idx], self.attribute_domain)

    def replace(self, **columns) -> "Dataset":
        cols = dict(subject_id=self.subject_id, features=self.features, time=self.time,
                    event=self.event, group=self.group, attribute_domain=self.attribute_domain)
        cols.update(columns)
        return Dataset(**cols)

    def group_mask(self, label) -> np.ndarray:
        return self.group == str(label)

    def group_sizes(self) -> dict:
        return {a: int(np.sum(self.group == a)) for a in self.attribute_domain}

    def by_group(self) -> dict:
        return {a: self.subset(self.group == a) for a in self.attribute_domain}


def records_to_dataset(records: Sequence[SurvivalRecord], attribute_domain=()) -> Dataset:
    records = list(records)
    if not records:
        raise ValueError("no records")
    return Dataset(
        subject_id=[r.subject_id for r in records],
        features=np.vstack([np.asarray(r.features, dtype=float) for r in records]),
        time=[r.time for r in records],
        event=[r.event for r in records],
        group=[r.group for r in records],
        attribute_domain=attribute_domain,
    )


def concat(datasets: Sequence[Dataset]) -> Dataset:
    domain = []
    for ds in datasets:
        domain += [a for a in ds.attribute_domain if a not in domain]
    return Dataset(
        np.concatenate([d.subject_id for d in datasets]),
        np.vstack([d.features for d in datasets]),
        np.concatenate([d.time for d in datasets]),
        np.concatenate([d.event for d in datasets]),
        np.concatenate([d.group for d in datasets]),
        tuple(domain),
    )


# ----------------------------------------------------------------------------
# CSV format: subject_id, y, delta, group, f0..f{d-1}


def write_csv(dataset: Dataset, path) -> None:
    d = dataset.n_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "y", "delta", "group"] + [f"f{j}" for j in range(d)])
        for i in range(len(dataset)):
            w.writerow([dataset.subject_id[i], repr(float(dataset.time[i])), int(dataset.event[i]),
                        dataset.group[i]] + [repr(float(v)) for v in dataset.features[i]])


def read_csv(path, attribute_domain=()) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file, header row is mandatory")
    header = [h.strip() for h in rows[0]]
    if header[:4] != ["subject_id", "y", "delta", "group"]:
        raise ValueError(f"{path}: header must start with subject_id,y,delta,group; got {header[:4]}")
    fcols = header[4:]
    if fcols != [f"f{j}" for j in range(len(fcols))]:
        raise ValueError(f"{path}: feature columns must be f0..f{{d-1}}")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no records")
    return Dataset(
        subject_id=[r[0] for r in body],
        features=np.array([[float(v) for v in r[4:]] for r in body]).reshape(len(body), len(fcols)),
        time=[float(r[1]) for r in body],
        event=[int(r[2]) for r in body],
        group=[r[3] for r in body],
        attribute_domain=attribute_domain,
    )


# ----------------------------------------------------------------------------
# time discretization


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Cut points ``0 = t_0 < t_1 < ... < t_L``.

    Interval ``l`` (1-based) is ``(t_{l-1}, t_l]``; time 0 belongs to interval 1.
    """

    cut_points: np.ndarray

    def __post_init__(self):
        cuts = _frozen(self.cut_points, dtype=float)
        if cuts.ndim != 1 or cuts.size < 3:
            raise ValueError("a grid needs at least two intervals")
        if cuts[0] != 0.0 or np.any(np.diff(cuts) <= 0):
            raise ValueError("cut points must start at 0 and be strictly increasing")
        object.__setattr__(self, "cut_points", cuts)

    @property
    def interval_count(self) -> int:
        return self.cut_points.size - 1

    @property
    def horizon(self) -> float:
        return float(self.cut_points[-1])

    def interval_index(self, y, clamp: bool = True) -> np.ndarray:
        """1-based interval index kappa(y).

        Times beyond the horizon are clamped to the last interval; pass
        ``clamp=False`` to get an error instead. Use :meth:`overflow` to
        count clamped values.
        """
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("negative time")
        k = np.searchsorted(self.cut_points, y, side="left")
        k = np.maximum(k, 1)
        if not clamp and np.any(k > self.interval_count):
            raise ValueError(f"{int(np.sum(k > self.interval_count))} times exceed the grid horizon")
        return np.minimum(k, self.interval_count)

    def overflow(self, y) -> int:
        return int(np.sum(np.asarray(y, dtype=float) > self.cut_points[-1]))


def build_time_grid(times, interval_count: int) -> TimeGrid:
    """Equidistant grid on ``[0, max(times)]``."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("cannot build a grid from no times")
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    if interval_count < 2:
        raise ValueError("interval_count must be >= 2")
    tmax = float(times.max())
    if tmax <= 0:
        raise ValueError("times are all zero; grid would be degenerate")
    return TimeGrid(np.linspace(0.0, tmax, interval_count + 1))


# ----------------------------------------------------------------------------
# step functions


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function equal to ``start_value`` before ``times[0]``."""

    times: np.ndarray
    values: np.ndarray
    start_value: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times, dtype=float))
        object.__setattr__(self, "values", _frozen(self.values, dtype=float))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else self.start_value,
                       self.start_value)
        return out if out.ndim else float(out)


class CensoringCurve(StepFunction):
    """Kaplan-Meier estimate of ``P(C > t)``."""


def kaplan_meier_censoring(dataset_or_time, event=None) -> CensoringCurve:
    """Product-limit estimate of the censoring survival function.

    Censorings play the role of events. At a time shared by true events and
    censorings the true events leave the risk set first, so the censoring
    hazard at ``t`` is ``c_t / (n_t - d_t)`` with ``n_t`` subjects still
    under observation and ``d_t`` true events at ``t``.
    """
    if event is None:
        time, event = dataset_or_time.time, dataset_or_time.event
    else:
        time = dataset_or_time
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=np.int64)
    if time.size == 0:
        raise ValueError("cannot estimate a censoring curve from an empty dataset")
    uniq, inv = np.unique(time, return_inverse=True)
    n_events = np.bincount(inv, weights=event, minlength=uniq.size)
    n_cens = np.bincount(inv, weights=1 - event, minlength=uniq.size)
    n_total = np.bincount(inv, minlength=uniq.size).astype(float)
    at_risk = n_total[::-1].cumsum()[::-1] - n_events
    jumps = n_cens > 0
    factors = np.ones_like(uniq)
    factors[jumps] = 1.0 - n_cens[jumps] / at_risk[jumps]
    values = np.cumprod(factors)
    return CensoringCurve(uniq[jumps], values[jumps], 1.0)


# ----------------------------------------------------------------------------
# predicted survival curves


@dataclass(frozen=True, eq=False)
class SurvivalCurves:
    """Batch of predicted survival step functions sharing jump times.

    With ``side="right"`` (right-continuous) ``values[i, k]`` is the survival
    of row ``i`` on ``[times[k], times[k+1])``. With ``side="left"`` it is the
    survival on ``(times[k-1], times[k]]``, i.e. a time is read at the end of
    the grid interval that contains it; model predictions use this form.
    ``times[0]`` is 0 and the value stays at ``values[:, -1]`` after the
    last time.
    """

    times: np.ndarray
    values: np.ndarray
    side: str = "right"

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        times = _frozen(self.times, dtype=float)
        values = _frozen(np.atleast_2d(np.asarray(self.values, dtype=float)))
        if values.shape[1] != times.size:
            raise ValueError("values must have one column per jump time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, idx) -> "SurvivalCurves":
        return SurvivalCurves(self.times, self.values[np.atleast_1d(np.asarray(idx))], self.side)

    def column(self, t) -> np.ndarray:
        """Index of the step active at each time in ``t``."""
        t = np.asarray(t, dtype=float)
        if self.side == "left":
            return np.minimum(np.searchsorted(self.times, t, side="left"), self.times.size - 1)
        return np.maximum(np.searchsorted(self.times, t, side="right") - 1, 0)

    def at(self, t) -> np.ndarray:
        """All curves at the scalar time ``t``; shape (n,)."""
        return self.values[:, int(self.column(float(t)))]

    def at_rows(self, t) -> np.ndarray:
        """Row ``i`` evaluated at ``t[i]``."""
        return self.values[np.arange(len(self)), self.column(t)]

    @staticmethod
    def mean(curves: Sequence["SurvivalCurves"]) -> "SurvivalCurves":
        times, side = curves[0].times, curves[0].side
        for c in curves[1:]:
            if c.times.shape != times.shape or np.any(c.times != times) or c.side != side:
                raise ValueError("curves must share jump times to be averaged")
        return SurvivalCurves(times, np.mean([c.values for c in curves], axis=0), side)


# ----------------------------------------------------------------------------
# splitting


def split_by_subject(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Partition subjects (not records) into train/validation/test.

    Subjects are shuffled with ``seed`` and assigned greedily so that the
    record counts track the target ratios.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios <= 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios.tolist()}")
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    subjects, inv = np.unique(dataset.subject_id, return_inverse=True)
    counts = np.bincount(inv)
    order = np.random.default_rng(seed).permutation(subjects.size)
    targets = ratios * len(dataset)
    cum_targets = np.cumsum(targets)
    assign = np.empty(subjects.size, dtype=np.int64)
    filled = 0
    part = 0
    for s in order:
        # move on once adding this subject overshoots more than stopping here
        while part < 2 and filled + counts[s] / 2 > cum_targets[part]:
            part += 1
        assign[s] = part
        filled += counts[s]
    rec_part = assign[inv]
    return tuple(dataset.subset(rec_part == p) for p in range(3))
