"""Experiment orchestration: configs, seeded sweeps, persistence and reports.

A sweep is a pure function of its config. For every seed the data are split
by subject (60/20/20), an optional shift corrupts train and validation, the
time grid is built on the (possibly shifted) training split, and every
(model kind, algorithm, hyperparameter draw) cell is trained and evaluated on
validation and on the untouched test split. Base models are picked by
validation utility, fair models with :func:`fairsurv.fairness.select_model`.

Records are written one JSON file per run plus an append-only CSV, so an
interrupted sweep can be resumed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bias import audit
from .core import Dataset, build_time_grid, kaplan_meier_censoring, read_csv, split_by_subject
from .fairness import (ALGORITHMS, DRO_STEP_RANGE, FRL_WEIGHT_RANGE, Candidate, FairnessConfig,
                       select_model, train_fair)
from .metrics import METRICS, EvalReport, IntegrationRange, default_integration_range, evaluate
from .models import HEAD_MODES, TrainConfig, train
from .scm import SCMConfig, apply_shift_delta, apply_shift_x, apply_shift_y, generate
from .stats import friedman_test, nemenyi_posthoc, wilcoxon_signed_rank

BASE = "base"
SHIFT_KINDS = ("none", "x", "y", "delta")
LR_RANGE = (-4.0, -3.0)
DECAY_RANGE = (-6.0, -4.0)
SEARCH_BOUNDS = {
    "learning_rate": LR_RANGE,
    "weight_decay": DECAY_RANGE,
    "dro_step": DRO_STEP_RANGE,
    "frl_weight": FRL_WEIGHT_RANGE,
}
FORMATS = ("csv", "json", "markdown")
_EXT = {"csv": ".csv", "json": ".json", "markdown": ".md"}


class ConfigError(ValueError):
    pass


class ReportError(ValueError):
    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message + ("" if not diagnostics else ": " + "; ".join(map(str, diagnostics[:5]))))


# ----------------------------------------------------------------------------
# configuration


@dataclass
class ShiftSpec:
    """Training-time corruption of one group.

    ``strength`` is the kernel width for ``x``, the noise half-width for
    ``y`` and the flip rate for ``delta``.
    """

    kind: str = "none"
    target: str = "1"
    strength: float = 0.0
    columns: Optional[list] = None

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ConfigError(f"shift kind must be one of {SHIFT_KINDS}, got {self.kind!r}")
        self.target = str(self.target)
        if self.strength < 0:
            raise ConfigError("shift strength must be nonnegative")
        if self.kind == "delta" and self.strength > 1:
            raise ConfigError("delta shift strength is a flip rate in [0, 1]")

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}:{self.target}:{self.strength:g}"

    def apply(self, data: Dataset, seed: int) -> Dataset:
        if self.kind == "x":
            return apply_shift_x(data, self.target, self.strength, self.columns)
        if self.kind == "y":
            return apply_shift_y(data, self.target, self.strength, seed)
        if self.kind == "delta":
            return apply_shift_delta(data, self.target, self.strength, seed)
        return data


@dataclass
class ExperimentConfig:
    """Everything a sweep needs. Serialized as JSON (see README for the schema)."""

    name: str = "synthetic"
    attribute: str = "A"
    scm: Optional[dict] = None
    n: int = 2000
    data_path: Optional[str] = None
    interval_count: int = 10
    model_kinds: list = field(default_factory=lambda: ["deephit"])
    algorithms: list = field(default_factory=list)
    fairness: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    draws: int = 1
    seeds: list = field(default_factory=lambda: list(range(10)))
    shifts: list = field(default_factory=lambda: [{"kind": "none"}])
    integration: dict = field(default_factory=lambda: {"lower": 10.0, "upper": 90.0})
    selection_metric: str = "ctd"
    tolerance: float = 0.05
    audit_columns: Optional[list] = None
    audit_bins: int = 10
    audit_projections: int = 100
    bootstrap: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        if (self.scm is None) == (self.data_path is None):
            raise ConfigError("give exactly one data source: 'scm' or 'data_path'")
        if self.scm is not None:
            SCMConfig.from_dict(self.scm)
            if self.n < 10:
                raise ConfigError("n must be at least 10")
        if self.interval_count < 2:
            raise ConfigError("interval_count must be at least 2")
        bad = [k for k in self.model_kinds if k not in HEAD_MODES]
        if not self.model_kinds or bad:
            raise ConfigError(f"model_kinds must be a nonempty subset of {sorted(HEAD_MODES)}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError(f"algorithms must be distinct names from {ALGORITHMS}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seed list must be nonempty and duplicate-free")
        if any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative integers")
        if self.draws < 1:
            raise ConfigError("draws must be >= 1")
        for name, rng in self.search.items():
            if name not in SEARCH_BOUNDS:
                raise ConfigError(f"unknown search dimension {name!r}")
            lo, hi = SEARCH_BOUNDS[name]
            if len(rng) != 2 or not lo <= rng[0] <= rng[1] <= hi:
                raise ConfigError(f"search range for {name} must lie within log10 bounds [{lo}, {hi}]")
        fixed = {"learning_rate", "weight_decay", "seed"} & set(self.train)
        if fixed:
            raise ConfigError(f"{sorted(fixed)} are searched or derived; set them through 'search' or 'seeds'")
        TrainConfig(**self.train)
        self.shift_specs()
        if self.selection_metric not in METRICS:
            raise ConfigError(f"selection_metric must be one of {METRICS}")
        if not 0 <= self.tolerance < 1:
            raise ConfigError("tolerance must lie in [0, 1)")
        self.integration_range(np.array([0.0, 1.0]))

    def shift_specs(self) -> list:
        specs = [ShiftSpec(**s) for s in self.shifts]
        labels = [s.label for s in specs]
        if not specs or len(set(labels)) != len(labels):
            raise ConfigError("shift scenarios must be nonempty and distinct")
        return specs

    def search_range(self, name) -> tuple:
        return tuple(self.search.get(name, SEARCH_BOUNDS[name]))

    def integration_range(self, train_times) -> IntegrationRange:
        pol = self.integration
        if "t_min" in pol or "t_max" in pol:
            return IntegrationRange(float(pol["t_min"]), float(pol["t_max"]))
        return default_integration_range(train_times, pol.get("lower", 10.0), pol.get("upper", 90.0))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ----------------------------------------------------------------------------
# records


def key_id(key: dict) -> str:
    blob = json.dumps(key, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


@dataclass
class ResultRecord:
    key: dict
    selected: bool = False
    val: Optional[dict] = None
    test: Optional[dict] = None
    bias: Optional[dict] = None
    grid: Optional[list] = None
    integration_range: Optional[list] = None
    warning: Optional[str] = None
    error: Optional[str] = None
    wall_clock: float = 0.0

    @property
    def id(self) -> str:
        return key_id(self.key)

    @property
    def ok(self) -> bool:
        return self.error is None

    def sort_key(self):
        return json.dumps(self.key, sort_keys=True)

    def report(self, split="test") -> EvalReport:
        return EvalReport.from_dict(getattr(self, split))

    def metric(self, name: str, split="test", group=None):
        """``name`` is a metric (``ctd``) or ``<metric>_gap`` / ``<metric>_es``."""
        blob = getattr(self, split)
        if blob is None:
            return None
        base, _, part = name.partition("_")
        m = blob["metrics"][base]
        if group is not None:
            return m["per_group"].get(str(group))
        return {"": m["overall"], "gap": m["gap"], "es": m["equity_scaling"]}[part]

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable_dict(self) -> dict:
        d = self.to_dict()
        d.pop("wall_clock")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(**d)


def _seed_for(*labels) -> np.random.SeedSequence:
    return np.random.SeedSequence([zlib.crc32(str(x).encode()) for x in labels])


def _rng(*labels) -> np.random.Generator:
    return np.random.default_rng(_seed_for(*labels))


def _int_seed(*labels) -> int:
    return int(_seed_for(*labels).generate_state(1)[0])


def sample_hyperparameters(config: ExperimentConfig, kind: str, algorithm: str, seed: int, draw: int) -> dict:
    """Log-uniform draws; a function of (seed, kind, algorithm, draw) only."""
    rng = _rng("hp", seed, kind, algorithm, draw)
    names = ["learning_rate", "weight_decay"]
    if algorithm == "DRO":
        names.append("dro_step")
    if algorithm == "FRL":
        names.append("frl_weight")
    hp = {}
    for name in names:
        lo, hi = config.search_range(name)
        hp[name] = float(10 ** rng.uniform(lo, hi))
    return hp


def clip_to_grid(data: Dataset, grid) -> Dataset:
    """Move censored records in the last interval to the previous cut point.

    A censored record in the last interval has an empty survival tail under a
    PMF head, so its likelihood term is degenerate.
    """
    L = grid.interval_count
    bad = (data.event == 0) & (grid.interval_index(data.time) == L)
    if not bad.any():
        return data
    y = data.time.copy()
    y[bad] = np.minimum(y[bad], grid.cut_points[L - 1])
    return data.replace(time=y)


@dataclass
class SeedContext:
    """Per-(seed, shift) data shared by every cell."""

    train: Dataset
    val: Dataset
    test: Dataset
    grid: object
    censoring: object
    integration: IntegrationRange
    bias: dict


def load_source(config: ExperimentConfig, seed: int) -> Dataset:
    if config.scm is not None:
        data, _ = generate(SCMConfig.from_dict(config.scm), config.n, seed)
        return data
    return read_csv(config.data_path)


def prepare(config: ExperimentConfig, seed: int, shift: ShiftSpec, data: Optional[Dataset] = None) -> SeedContext:
    data = load_source(config, seed) if data is None else data
    train_clean, val_clean, test = split_by_subject(data, (0.6, 0.2, 0.2), seed)
    # the evaluator (censoring curve, integration range) comes from clean train data,
    # so in-distribution and shifted models are scored identically
    censoring = kaplan_meier_censoring(train_clean)
    integration = config.integration_range(train_clean.time)
    tr = shift.apply(train_clean, _int_seed("shift-train", seed))
    va = shift.apply(val_clean, _int_seed("shift-val", seed))
    grid = build_time_grid(tr.time, config.interval_count)
    tr, va = clip_to_grid(tr, grid), clip_to_grid(va, grid)
    cols = config.audit_columns
    if cols is None and config.scm is not None:
        cols = SCMConfig.from_dict(config.scm).xz_columns
    bias = audit(tr, cols, config.audit_bins, config.audit_projections, seed).to_dict()
    return SeedContext(tr, va, test, grid, censoring, integration, bias)


def _fit(kind, algorithm, ctx: SeedContext, config: ExperimentConfig, hp: dict, seed: int):
    tc = TrainConfig(**config.train, learning_rate=hp["learning_rate"], weight_decay=hp["weight_decay"],
                     seed=seed)
    if algorithm == BASE:
        model, _ = train(kind, ctx.train, ctx.val, ctx.grid, tc)
        return model
    extra = {}
    if algorithm == "DRO":
        extra["dro_step"] = hp["dro_step"]
    if algorithm == "FRL":
        extra["frl_weight"] = hp["frl_weight"]
        if "mmd_bandwidth" in config.fairness:
            extra["mmd_bandwidth"] = config.fairness["mmd_bandwidth"]
    model, _ = train_fair(kind, ctx.train, ctx.val, ctx.grid, tc, FairnessConfig(algorithm, **extra))
    return model


def run_cell(config: ExperimentConfig, ctx: SeedContext, key: dict) -> ResultRecord:
    """Train and evaluate one (kind, algorithm, hyperparameters, seed, shift) cell."""
    start = time.perf_counter()
    rec = ResultRecord(key, bias=ctx.bias, grid=ctx.grid.cut_points.tolist(),
                       integration_range=[ctx.integration.t_min, ctx.integration.t_max])
    try:
        model = _fit(key["model_kind"], key["algorithm"], ctx, config, key["hyperparameters"], key["seed"])
        for split, data in (("val", ctx.val), ("test", ctx.test)):
            curves = model.predict_survival_curve(data.features)
            boot = config.bootstrap if split == "test" else 0
            rep = evaluate(curves, data, ctx.censoring, ctx.grid, ctx.integration, METRICS, boot,
                           _int_seed("boot", key["seed"]) % 2 ** 32)
            setattr(rec, split, rep.to_dict())
    except Exception as exc:  # recorded against the key; the sweep goes on
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_clock = time.perf_counter() - start
    return rec


def _error_record(key, exc) -> ResultRecord:
    return ResultRecord(key, error=f"{type(exc).__name__}: {exc}")


# ----------------------------------------------------------------------------
# persistence


RECORD_DIR = "records"
CSV_NAME = "results.csv"
SELECTED_NAME = "selected.json"


class RecordStore:
    """One JSON per record plus an append-only CSV; a single writer."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.rec_dir = None if out_dir is None else os.path.join(out_dir, RECORD_DIR)
        if self.rec_dir:
            os.makedirs(self.rec_dir, exist_ok=True)

    def _path(self, rid):
        return os.path.join(self.rec_dir, rid + ".json")

    def load(self, key) -> Optional[ResultRecord]:
        if not self.rec_dir:
            return None
        path = self._path(key_id(key))
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            rec = ResultRecord.from_dict(json.load(fh))
        return rec if rec.key == key else None

    def save(self, rec: ResultRecord) -> None:
        if not self.rec_dir:
            return
        tmp = self._path(rec.id) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(rec.to_dict(), fh, sort_keys=True)
        os.replace(tmp, self._path(rec.id))
        path = os.path.join(self.out_dir, CSV_NAME)
        new = not os.path.exists(path)
        with open(path, "a", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            if new:
                w.writeheader()
            w.writerow(record_row(rec))


CSV_COLUMNS = ["record_id", "dataset", "attribute", "algorithm", "model_kind", "seed", "shift",
               "hyperparameters", "error"] + [f"{m}_{p}" for m in METRICS for p in ("overall", "gap", "es")] \
              + ["record_json"]


def record_row(rec: ResultRecord) -> dict:
    k = rec.key
    row = {"record_id": rec.id, "dataset": k["dataset"], "attribute": k["attribute"],
           "algorithm": k["algorithm"], "model_kind": k["model_kind"], "seed": k["seed"],
           "shift": k["shift"], "hyperparameters": json.dumps(k["hyperparameters"], sort_keys=True),
           "error": rec.error or "", "record_json": json.dumps(rec.to_dict(), sort_keys=True)}
    for m in METRICS:
        for p, name in (("overall", m), ("gap", m + "_gap"), ("es", m + "_es")):
            v = rec.metric(name) if rec.test else None
            row[f"{m}_{p}"] = "" if v is None else repr(v)
    return row


def records_to_csv(records: Sequence[ResultRecord]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow(record_row(rec))
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    return [ResultRecord.from_dict(json.loads(r["record_json"])) for r in csv.DictReader(io.StringIO(text))]


def load_records(out_dir) -> list:
    """Every record in a sweep directory, ordered by key."""
    rec_dir = os.path.join(out_dir, RECORD_DIR)
    if not os.path.isdir(rec_dir):
        raise FileNotFoundError(f"no records under {out_dir}")
    recs = []
    for name in sorted(os.listdir(rec_dir)):
        if name.endswith(".json"):
            with open(os.path.join(rec_dir, name), encoding="utf-8") as fh:
                recs.append(ResultRecord.from_dict(json.load(fh)))
    sel_path = os.path.join(out_dir, SELECTED_NAME)
    if os.path.exists(sel_path):
        with open(sel_path, encoding="utf-8") as fh:
            sel = json.load(fh)
        chosen, warnings = set(sel["selected"]), sel.get("warnings", {})
        for r in recs:
            r.selected, r.warning = r.id in chosen, warnings.get(r.id)
    return sorted(recs, key=ResultRecord.sort_key)


# ----------------------------------------------------------------------------
# sweep


def _utility(rec: ResultRecord, metric: str, split="val"):
    return rec.metric(metric, split) if rec.ok else None


def _select(config: ExperimentConfig, records: list) -> None:
    """Mark the selected record of every (dataset, shift, kind, seed, algorithm) group."""
    groups = {}
    for r in records:
        k = r.key
        groups.setdefault((k["shift"], k["model_kind"], k["seed"]), {}).setdefault(k["algorithm"], []).append(r)
    metric = config.selection_metric
    lower_better = metric == "ibs"
    for by_alg in groups.values():
        base = [r for r in by_alg.get(BASE, []) if _utility(r, metric) is not None]
        if not base:
            continue
        pick = min(base, key=lambda r: ((1 if lower_better else -1) * _utility(r, metric), r.sort_key()))
        pick.selected = True
        base_u = _utility(pick, metric)
        for alg, recs in by_alg.items():
            if alg == BASE:
                continue
            cands = []
            for r in recs:
                u, f = _utility(r, metric), _utility(r, metric + "_gap")
                if u is not None and f is not None:
                    cands.append(Candidate(u, f, r.key["seed"], r.sort_key(), r))
            if not cands:
                continue
            sel = select_model(cands, base_u, metric, config.tolerance)
            sel.candidate.payload.selected = True
            sel.candidate.payload.warning = sel.warning


def sweep_keys(config: ExperimentConfig, seed: int, shift: ShiftSpec) -> list:
    keys = []
    for kind in config.model_kinds:
        for alg in [BASE] + list(config.algorithms):
            for draw in range(config.draws):
                keys.append({"dataset": config.name, "attribute": config.attribute, "algorithm": alg,
                             "model_kind": kind, "seed": int(seed), "shift": shift.label, "draw": draw,
                             "hyperparameters": sample_hyperparameters(config, kind, alg, seed, draw)})
    return keys


def run_experiment(config: ExperimentConfig, out_dir=None, progress=None) -> list:
    """Run (or resume) a sweep and return every record, ordered by key.

    With an output directory, records already on disk are reused and new ones
    are persisted as soon as they finish.
    """
    out_dir = out_dir or config.out
    store = RecordStore(out_dir)
    if out_dir:
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    shared = None if config.data_path is None else read_csv(config.data_path)
    records = []
    for shift in config.shift_specs():
        for seed in config.seeds:
            keys = sweep_keys(config, seed, shift)
            done = {key_id(k): store.load(k) for k in keys}
            ctx = None
            for key in keys:
                rec = done[key_id(key)]
                if rec is None:
                    if ctx is None:
                        try:
                            ctx = prepare(config, seed, shift, shared)
                        except Exception as exc:
                            ctx = exc
                    rec = _error_record(key, ctx) if isinstance(ctx, Exception) else run_cell(config, ctx, key)
                    store.save(rec)
                    if progress:
                        progress(rec)
                rec.selected, rec.warning = False, None
                records.append(rec)
    _select(config, records)
    records.sort(key=ResultRecord.sort_key)
    if out_dir:
        with open(os.path.join(out_dir, SELECTED_NAME), "w", encoding="utf-8") as fh:
            json.dump({"selected": [r.id for r in records if r.selected],
                       "warnings": {r.id: r.warning for r in records if r.warning}}, fh, indent=2)
    return records


def selected(records: Sequence[ResultRecord]) -> list:
    return [r for r in records if r.selected and r.ok]


# ----------------------------------------------------------------------------
# statistics over records


def _pair_label(r: ResultRecord) -> str:
    k = dict(r.key)
    return json.dumps(k, sort_keys=True)


def compare_groups(records: Sequence[ResultRecord], metric: str = "ctd", split: str = "test") -> list:
    """Two-sided Wilcoxon signed-rank test between every pair of groups.

    Runs are paired by key; runs where either group's metric is undefined are
    dropped. One row per (dataset, attribute, group pair).
    """
    blocks = {}
    for r in sorted((r for r in records if r.ok and getattr(r, split)), key=_pair_label):
        blocks.setdefault((r.key["dataset"], r.key["attribute"]), []).append(r)
    rows = []
    for (dataset, attribute), recs in sorted(blocks.items()):
        domain = sorted(recs[0].report(split).metrics[metric].per_group)
        for i, a in enumerate(domain):
            for b in domain[i + 1:]:
                pairs = [(r.metric(metric, split, a), r.metric(metric, split, b)) for r in recs]
                pairs = np.array([p for p in pairs if None not in p], dtype=float).reshape(-1, 2)
                if len(pairs) < 2:
                    raise ValueError(f"fewer than 2 paired runs for {dataset}/{attribute} groups {a}, {b}")
                res = wilcoxon_signed_rank(pairs[:, 0], pairs[:, 1], "two_sided")
                rows.append({"dataset": dataset, "attribute": attribute, "metric": metric,
                             "group_a": a, "group_b": b, "n_runs": int(len(pairs)),
                             "median_difference": float(np.median(pairs[:, 0] - pairs[:, 1])),
                             "statistic": res.statistic, "p_value": res.p_value, "method": res.method})
    return rows


def rank_algorithms(records: Sequence[ResultRecord], metric: str = "ctd", alpha: float = 0.05,
                    block_by=("dataset", "attribute")) -> dict:
    """Friedman test and Nemenyi post-hoc over selected records.

    Each block's cell is the median over seeds of the selected model's test
    value; rank 1 is the best algorithm.
    """
    cells = {}
    for r in selected(records):
        v = r.metric(metric)
        if v is None:
            continue
        block = tuple(r.key[b] for b in block_by)
        alg = r.key["algorithm"] if r.key["algorithm"] != BASE else r.key["model_kind"]
        cells.setdefault(block, {}).setdefault(alg, []).append(v)
    if not cells:
        raise ValueError("no selected records with that metric")
    algs = sorted({a for c in cells.values() for a in c})
    blocks = sorted(cells)
    missing = [(b, a) for b in blocks for a in algs if a not in cells[b]]
    if missing:
        raise ValueError(f"missing block/treatment cells: {missing[:5]}")
    mat = np.array([[np.median(cells[b][a]) for a in algs] for b in blocks])
    higher_better = not (metric == "ibs" or metric.endswith("_gap"))
    scores = -mat if higher_better else mat
    fr = friedman_test(scores)
    nem = nemenyi_posthoc(scores, alpha, algs)
    return {"metric": metric, "algorithms": algs, "blocks": [list(b) for b in blocks],
            "values": mat.tolist(), "friedman": asdict(fr), "nemenyi": nem.to_dict(),
            "cd_diagram": nem.cd_diagram()}


# ----------------------------------------------------------------------------
# reports


REPORT_COLUMNS = ("ctd", "auctd", "ibs", "ctd_gap", "auctd_gap", "ibs_gap", "ctd_es", "auctd_es", "ibs_es")


def relative_change(base: float, value: float) -> float:
    """Percent change of ``value`` relative to ``base``."""
    if base == 0:
        return float("nan")
    return 100.0 * (value - base) / base


def format_change(pct: float) -> str:
    return "n/a" if not np.isfinite(pct) else f"{pct:+.2f}%"


def _check_grids(recs: Sequence[ResultRecord]) -> None:
    counts = {len(r.grid) - 1 for r in recs if r.grid}
    if len(counts) > 1:
        raise ReportError("records use different interval counts", [f"interval counts {sorted(counts)}"])
    by_cell = {}
    problems = []
    for r in recs:
        cell = (r.key["dataset"], r.key["attribute"], r.key["shift"], r.key["seed"])
        ref = by_cell.setdefault(cell, (r.grid, r.integration_range, r.id))
        if ref[0] != r.grid or ref[1] != r.integration_range:
            problems.append(f"{ref[2]} vs {r.id} for {cell}")
    if problems:
        raise ReportError("records compared against each other use different grids", problems)


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def report_tables(records: Sequence[ResultRecord]) -> dict:
    """Summary, per-group and in- vs out-of-distribution tables as row lists."""
    recs = selected(records)
    if not recs:
        raise ReportError("no selected records to report")
    _check_grids(recs)
    groups = {}
    for r in recs:
        k = r.key
        groups.setdefault((k["dataset"], k["attribute"], k["shift"], k["model_kind"]), {}) \
            .setdefault(k["algorithm"], []).append(r)
    summary, per_group = [], []
    for (dataset, attribute, shift, kind), by_alg in sorted(groups.items()):
        base = {c: _median(r.metric(c) for r in by_alg.get(BASE, [])) for c in REPORT_COLUMNS}
        for alg in [BASE] + sorted(a for a in by_alg if a != BASE):
            if alg not in by_alg:
                continue
            row = {"dataset": dataset, "attribute": attribute, "shift": shift, "model_kind": kind,
                   "algorithm": alg, "n_seeds": len(by_alg[alg])}
            for c in REPORT_COLUMNS:
                v = _median(r.metric(c) for r in by_alg[alg])
                row[c] = v
                b = base[c]
                row[c + "_change"] = (relative_change(b, v) if v is not None and b is not None else None)
            summary.append(row)
            domain = sorted(by_alg[alg][0].test["metrics"]["ctd"]["per_group"])
            for m in METRICS:
                for g in domain:
                    per_group.append({"dataset": dataset, "attribute": attribute, "shift": shift,
                                      "model_kind": kind, "algorithm": alg, "metric": m, "group": g,
                                      "value": _median(r.metric(m, group=g) for r in by_alg[alg])})
    scatter = []
    clean = {(r.key["dataset"], r.key["attribute"], r.key["model_kind"], r.key["algorithm"], r.key["seed"]): r
             for r in recs if r.key["shift"] == "none"}
    for r in recs:
        k = r.key
        ref = clean.get((k["dataset"], k["attribute"], k["model_kind"], k["algorithm"], k["seed"]))
        if k["shift"] == "none" or ref is None:
            continue
        row = {"dataset": k["dataset"], "attribute": k["attribute"], "model_kind": k["model_kind"],
               "algorithm": k["algorithm"], "seed": k["seed"], "shift": k["shift"]}
        for m in METRICS:
            row[f"{m}_id"], row[f"{m}_ood"] = ref.metric(m), r.metric(m)
        scatter.append(row)
    return {"summary": summary, "groups": per_group, "shift": scatter}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_rows(rows: Sequence[dict], fmt: str, title: str = "") -> str:
    """Render a list of flat dicts as csv, json or a markdown table."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    cols = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    if fmt == "json":
        return json.dumps(list(rows), indent=2, sort_keys=False)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in cols})
        return buf.getvalue()
    lines = [f"## {title}", ""] if title else []
    lines.append("| " + " | ".join(cols) + " |")
    lines.append("|" + "---|" * len(cols))
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(c)) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def markdown_summary(rows: Sequence[dict]) -> str:
    """Summary table with each cell as ``value (change)``."""
    head = ["dataset", "attribute", "shift", "model_kind", "algorithm"]
    lines = ["| " + " | ".join(head + list(REPORT_COLUMNS)) + " |", "|" + "---|" * (len(head) + len(REPORT_COLUMNS))]
    for r in rows:
        cells = [str(r[h]) for h in head]
        for c in REPORT_COLUMNS:
            v, ch = r[c], r[c + "_change"]
            cells.append("" if v is None else f"{v:.4f} ({format_change(ch) if ch is not None else 'n/a'})")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(records: Sequence[ResultRecord], fmt: str, out_dir) -> list:
    """Write ``summary``, ``groups`` and ``shift`` tables; returns the paths."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if not records:
        raise ReportError("no records")
    tables = report_tables(records)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, rows in tables.items():
        path = os.path.join(out_dir, name + _EXT[fmt])
        if fmt == "markdown" and name == "summary":
            text = "## summary\n\n" + markdown_summary(rows)
        else:
            text = render_rows(rows, fmt, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        paths.append(path)
    return paths
