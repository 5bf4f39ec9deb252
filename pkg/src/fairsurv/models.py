"""Discrete-time survival networks (PMF, DeepHit, Nnet-survival).

Every model is a two-layer tanh encoder followed by one or more linear heads
producing ``L`` outputs per record. ``simplex`` heads are read through a
softmax as an interval PMF; ``hazard`` heads through a logistic function as
per-interval hazards. Losses come with hand-derived gradients with respect to
the head outputs, and :func:`backward` pushes them through the network.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, softmax

from .core import Dataset, SurvivalCurves, TimeGrid

logger = logging.getLogger(__name__)

EPS = 1e-12
HEAD_MODES = {"pmf": "simplex", "deephit": "simplex", "nnet": "hazard"}
CHECKPOINT_VERSION = 1


class DegenerateLikelihoodError(ValueError):
    """Censored records in the last interval have an empty survival tail."""

    def __init__(self, indices):
        self.indices = np.asarray(indices).tolist()
        super().__init__(f"censored records in the last interval (empty tail sum) at indices {self.indices}")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, value):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    rank_temperature: float = 0.1
    rank_weight: float = 0.1
    hidden: tuple = (64, 16)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.rank_temperature <= 0:
            raise ValueError("learning_rate and rank_temperature must be positive")
        if self.weight_decay < 0 or self.rank_weight < 0:
            raise ValueError("weight_decay and rank_weight must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class SurvivalModel:
    """Encoder + head parameters.

    ``params`` holds ``W0, b0, W1, b1`` for the encoder and ``Wh`` (heads, r, L),
    ``bh`` (heads, L) for the heads. ``head_groups`` names the group owned by
    each head when there is more than one (domain-independent training).
    """

    kind: str
    grid: TimeGrid
    params: dict
    head_groups: tuple = ()

    @property
    def head_mode(self) -> str:
        return HEAD_MODES[self.kind]

    @property
    def n_features(self) -> int:
        return self.params["W0"].shape[0]

    @property
    def n_heads(self) -> int:
        return self.params["Wh"].shape[0]

    def copy(self) -> "SurvivalModel":
        return SurvivalModel(self.kind, self.grid, {k: v.copy() for k, v in self.params.items()},
                             self.head_groups)

    def head_index(self, groups) -> np.ndarray:
        """Head used for each record during training."""
        groups = np.asarray(groups).astype(str)
        if self.n_heads == 1:
            return np.zeros(groups.shape[0], dtype=np.int64)
        lookup = {g: i for i, g in enumerate(self.head_groups)}
        missing = sorted(set(groups.tolist()) - set(lookup))
        if missing:
            raise ValueError(f"no head for groups {missing}")
        return np.array([lookup[g] for g in groups], dtype=np.int64)

    def predict_survival_curve(self, x) -> SurvivalCurves:
        return predict_survival_curve(self, x)


def init_model(kind: str, n_features: int, grid: TimeGrid, hidden=(64, 16), seed=0,
               head_groups=()) -> SurvivalModel:
    """Fan-in scaled symmetric uniform initialization."""
    if kind not in HEAD_MODES:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(HEAD_MODES)}")
    rng = np.random.default_rng(seed)
    sizes = (n_features,) + tuple(hidden)
    params = {}
    for i in range(len(hidden)):
        bound = 1.0 / np.sqrt(sizes[i])
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1]))
        params[f"b{i}"] = rng.uniform(-bound, bound, size=sizes[i + 1])
    n_heads = max(len(head_groups), 1)
    r, L = sizes[-1], grid.interval_count
    bound = 1.0 / np.sqrt(r)
    params["Wh"] = rng.uniform(-bound, bound, size=(n_heads, r, L))
    params["bh"] = rng.uniform(-bound, bound, size=(n_heads, L))
    return SurvivalModel(kind, grid, params, tuple(str(g) for g in head_groups))


# ----------------------------------------------------------------------------
# forward / backward


def _n_layers(params) -> int:
    return sum(1 for k in params if k.startswith("W") and k[1:].isdigit())


def encode(params, X, return_cache=False):
    """Representation ``z = g(x)`` of each row."""
    h = np.asarray(X, dtype=float)
    cache = [h]
    for i in range(_n_layers(params)):
        h = np.tanh(h @ params[f"W{i}"] + params[f"b{i}"])
        cache.append(h)
    return (h, cache) if return_cache else h


def head_outputs(params, z, heads) -> np.ndarray:
    if params["Wh"].shape[0] == 1:
        return z @ params["Wh"][0] + params["bh"][0]
    return np.einsum("nr,nrl->nl", z, params["Wh"][heads]) + params["bh"][heads]


def forward(model: SurvivalModel, X, heads=None):
    z, cache = encode(model.params, X, return_cache=True)
    if heads is None:
        heads = np.zeros(z.shape[0], dtype=np.int64)
    return head_outputs(model.params, z, heads), cache


def backward(params, cache, heads, d_out, d_z=None) -> dict:
    """Gradients of a scalar loss given its gradient w.r.t. head outputs.

    ``d_z`` adds a gradient arriving directly at the representation.
    """
    z = cache[-1]
    grads = {}
    n_heads = params["Wh"].shape[0]
    dWh = np.zeros_like(params["Wh"])
    dbh = np.zeros_like(params["bh"])
    if n_heads == 1:
        dWh[0] = z.T @ d_out
        dbh[0] = d_out.sum(axis=0)
        dz = d_out @ params["Wh"][0].T
    else:
        dz = np.empty_like(z)
        for h in range(n_heads):
            rows = heads == h
            dWh[h] = z[rows].T @ d_out[rows]
            dbh[h] = d_out[rows].sum(axis=0)
            dz[rows] = d_out[rows] @ params["Wh"][h].T
    grads["Wh"], grads["bh"] = dWh, dbh
    if d_z is not None:
        dz = dz + d_z
    for i in reversed(range(_n_layers(params))):
        da = dz * (1.0 - cache[i + 1] ** 2)
        grads[f"W{i}"] = cache[i].T @ da
        grads[f"b{i}"] = da.sum(axis=0)
        if i:
            dz = da @ params[f"W{i}"].T
    return grads


def outputs_to_survival(outputs, head_mode) -> np.ndarray:
    """Survival at every cut ``t_0..t_L``; shape (n, L+1)."""
    n, L = outputs.shape
    surv = np.empty((n, L + 1))
    surv[:, 0] = 1.0
    if head_mode == "simplex":
        f = softmax(outputs, axis=1)
        surv[:, 1:L] = np.cumsum(f[:, ::-1], axis=1)[:, ::-1][:, 1:]
        surv[:, L] = 0.0
    else:
        surv[:, 1:] = np.cumprod(expit(-outputs), axis=1)
    return surv


def predict_pmf(model: SurvivalModel, X, heads=None) -> np.ndarray:
    out, _ = forward(model, X, heads)
    if model.head_mode != "simplex":
        raise ValueError("model has hazard outputs; use predict_hazard")
    return softmax(out, axis=1)


def predict_hazard(model: SurvivalModel, X, heads=None) -> np.ndarray:
    out, _ = forward(model, X, heads)
    if model.head_mode != "hazard":
        raise ValueError("model has simplex outputs; use predict_pmf")
    return expit(out)


def predict_survival_curve(model: SurvivalModel, x) -> SurvivalCurves:
    """Survival curves on the model grid.

    A time inside interval ``(t_{l-1}, t_l]`` reads the survival at ``t_l``.
    A model with several heads averages the per-head curves, so no group
    label is needed at prediction time.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    z = encode(model.params, X)
    surv = np.zeros((X.shape[0], model.grid.interval_count + 1))
    for h in range(model.n_heads):
        out = z @ model.params["Wh"][h] + model.params["bh"][h]
        surv += outputs_to_survival(out, model.head_mode)
    return SurvivalCurves(model.grid.cut_points, surv / model.n_heads, side="left")


# ----------------------------------------------------------------------------
# losses on predictions


def _degenerate_check(kappa, event, L):
    bad = np.flatnonzero((event == 0) & (kappa == L))
    if bad.size:
        raise DegenerateLikelihoodError(bad)


def pmf_nll(pmf, time, event, grid: TimeGrid, eps: float = EPS) -> float:
    """Mean negative log-likelihood of interval probabilities."""
    pmf = np.atleast_2d(np.asarray(pmf, dtype=float))
    event = np.asarray(event)
    k = grid.interval_index(time)
    _degenerate_check(k, event, grid.interval_count)
    rows = np.arange(pmf.shape[0])
    tails = np.cumsum(pmf[:, ::-1], axis=1)[:, ::-1]
    f_k = pmf[rows, k - 1]
    tail = tails[rows, np.minimum(k, grid.interval_count - 1)]
    ll = event * np.log(np.maximum(f_k, eps)) + (1 - event) * np.log(np.maximum(tail, eps))
    return float(-ll.mean())


def comparable_pairs(time, event) -> np.ndarray:
    """Boolean matrix ``C[i, j] = event_i and time_i < time_j``."""
    time = np.asarray(time, dtype=float)
    return (np.asarray(event) == 1)[:, None] & (time[:, None] < time[None, :])


def deephit_rank_loss(pmf, time, event, grid: TimeGrid, sigma: float) -> float:
    """Sum over comparable pairs of ``exp(-(F_i(k_i) - F_j(k_i)) / sigma)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pmf = np.atleast_2d(np.asarray(pmf, dtype=float))
    k = grid.interval_index(time) - 1
    cdf = np.cumsum(pmf, axis=1)
    C = comparable_pairs(time, event)
    if not C.any():
        return 0.0
    own = cdf[np.arange(pmf.shape[0]), k]
    other = cdf[:, k].T
    return float(np.sum(np.exp(-(own[:, None] - other) / sigma)[C]))


def nnet_survival_nll(logits, time, event, grid: TimeGrid) -> float:
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    loss, _ = _nnet_terms(logits, grid.interval_index(time) - 1, np.asarray(event))
    return loss


# ----------------------------------------------------------------------------
# losses on raw outputs, with gradients


def _pmf_terms(o, k, e, eps=EPS):
    """NLL and its gradient w.r.t. the pre-softmax outputs; ``k`` is 0-based."""
    n, L = o.shape
    rows = np.arange(n)
    f = softmax(o, axis=1)
    tails = np.cumsum(f[:, ::-1], axis=1)[:, ::-1]
    f_k = f[rows, k]
    tail = tails[rows, np.minimum(k + 1, L - 1)]
    ll = e * np.log(np.maximum(f_k, eps)) + (1 - e) * np.log(np.maximum(tail, eps))
    grad = np.zeros_like(o)
    ev = (e == 1) & (f_k > eps)
    grad[ev] = f[ev]
    grad[ev, k[ev]] -= 1.0
    ce = (e == 0) & (tail > eps)
    if ce.any():
        after = np.arange(L)[None, :] > k[ce][:, None]
        grad[ce] = f[ce] - f[ce] * after / tail[ce][:, None]
    return float(-ll.mean()), grad / n, f


def _rank_terms(f, k, time, e, sigma):
    """Rank-loss sum, its gradient w.r.t. the PMF, and the pair count."""
    C = comparable_pairs(time, e)
    n_pairs = int(C.sum())
    if n_pairs == 0:
        return 0.0, np.zeros_like(f), 0
    cdf = np.cumsum(f, axis=1)
    n, L = f.shape
    own = cdf[np.arange(n), k]
    other = cdf[:, k].T
    E = np.where(C, np.exp(-(own[:, None] - other) / sigma), 0.0)
    onehot = np.zeros((n, L))
    onehot[np.arange(n), k] = 1.0
    d_cdf = -(E.sum(axis=1) / sigma)[:, None] * onehot + (E.T @ onehot) / sigma
    d_f = np.cumsum(d_cdf[:, ::-1], axis=1)[:, ::-1]
    return float(E.sum()), d_f, n_pairs


def _softmax_backward(f, d_f):
    return f * (d_f - np.sum(d_f * f, axis=1, keepdims=True))


def _nnet_terms(o, k, e):
    n, L = o.shape
    rows = np.arange(n)
    o_k = o[rows, k]
    before = np.arange(L)[None, :] < k[:, None]
    sp_pos = np.logaddexp(0.0, o)
    loss_i = (e * np.logaddexp(0.0, -o_k) + (1 - e) * np.logaddexp(0.0, o_k)
              + np.sum(sp_pos * before, axis=1))
    grad = expit(o) * before
    grad[rows, k] += np.where(e == 1, -expit(-o_k), expit(o_k))
    return float(loss_i.mean()), grad / n


def base_objective(kind, outputs, kappa0, event, time, config: TrainConfig):
    """Training loss of one batch and its gradient w.r.t. the head outputs.

    DeepHit adds ``rank_weight`` times the rank loss averaged over the
    batch's comparable pairs.
    """
    if HEAD_MODES[kind] == "hazard":
        return _nnet_terms(outputs, kappa0, event)
    loss, grad, f = _pmf_terms(outputs, kappa0, event)
    if kind == "deephit" and config.rank_weight > 0:
        rank, d_f, n_pairs = _rank_terms(f, kappa0, time, event, config.rank_temperature)
        if n_pairs:
            scale = config.rank_weight / n_pairs
            loss = loss + scale * rank
            grad = grad + scale * _softmax_backward(f, d_f)
    return loss, grad


def model_loss(model: SurvivalModel, data: Dataset, config: TrainConfig, heads=None) -> float:
    kappa = model.grid.interval_index(data.time)
    if model.head_mode == "simplex":
        _degenerate_check(kappa, data.event, model.grid.interval_count)
    if heads is None:
        heads = model.head_index(data.group) if model.n_heads > 1 else None
    out, _ = forward(model, data.features, heads)
    loss, _ = base_objective(model.kind, out, kappa - 1, data.event, data.time, config)
    return loss


def loss_and_gradient(model: SurvivalModel, X, time, event, loss: str, sigma: float = 0.1):
    """One loss on the model's outputs and its gradient w.r.t. every parameter.

    ``loss`` is ``"pmf_nll"``, ``"rank"`` (the summed DeepHit rank loss) or
    ``"nnet_nll"``. Values agree with :func:`pmf_nll`,
    :func:`deephit_rank_loss` and :func:`nnet_survival_nll`.
    """
    out, cache = forward(model, X)
    time, event = np.asarray(time, dtype=float), np.asarray(event)
    k0 = model.grid.interval_index(time) - 1
    if loss == "pmf_nll":
        _degenerate_check(k0 + 1, event, model.grid.interval_count)
        value, d_out, _ = _pmf_terms(out, k0, event)
    elif loss == "rank":
        f = softmax(out, axis=1)
        value, d_f, _ = _rank_terms(f, k0, time, event, sigma)
        d_out = _softmax_backward(f, d_f)
    elif loss == "nnet_nll":
        value, d_out = _nnet_terms(out, k0, event)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, backward(model.params, cache, np.zeros(len(time), dtype=np.int64), d_out)


# ----------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k] + self.wd * p if self.wd else grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainingTrace:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    extra: dict = field(default_factory=dict)


StepFn = Callable[[SurvivalModel, np.ndarray, int], tuple]


def validate_training_set(model_kind, data: Dataset, grid: TimeGrid):
    if len(data) == 0:
        raise ValueError("training set is empty")
    if HEAD_MODES[model_kind] == "simplex":
        _degenerate_check(grid.interval_index(data.time), data.event, grid.interval_count)


def fit(model: SurvivalModel, train: Dataset, val: Optional[Dataset], config: TrainConfig,
        step: StepFn, trace: Optional[TrainingTrace] = None):
    """Minibatch Adam on ``step``'s loss; keeps the parameters with the best
    validation loss (or the last ones when there is no validation set).

    ``step(model, batch_indices, epoch)`` returns ``(loss, grads)``.
    """
    trace = trace or TrainingTrace()
    if config.epochs == 0:
        return model, trace
    opt = Adam(model.params, config.learning_rate, config.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    n = len(train)
    best, best_val = None, np.inf
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, grads = step(model, idx, epoch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            opt.step(model.params, grads)
            losses.append(loss)
        trace.train_loss.append(float(np.mean(losses)))
        if val is not None and len(val):
            v = model_loss(model, val, config)
            trace.val_loss.append(v)
            if v < best_val:
                best_val, best = v, {k: p.copy() for k, p in model.params.items()}
                trace.best_epoch = epoch
    if best is not None:
        model.params = best
    else:
        trace.best_epoch = config.epochs - 1
    return model, trace


def group_losses(kind, outputs, kappa0, event, time, labels, domain, config: TrainConfig):
    """Per-group base losses and output gradients for the groups present in a batch."""
    found = {}
    for i, a in enumerate(domain):
        rows = np.flatnonzero(labels == a)
        if rows.size:
            loss, grad = base_objective(kind, outputs[rows], kappa0[rows], event[rows], time[rows], config)
            found[i] = (rows, loss, grad)
    return found


def weighted_group_objective(found: dict, weights, shape):
    """Combine per-group losses with ``weights`` renormalized over present groups."""
    present = sorted(found)
    w = np.asarray(weights, dtype=float)[present]
    w = w / w.sum()
    loss, d_out = 0.0, np.zeros(shape)
    for wi, i in zip(w, present):
        rows, la, ga = found[i]
        loss += wi * la
        d_out[rows] += wi * ga
    return loss, d_out


def _batch(model, train: Dataset, idx):
    k0 = model.grid.interval_index(train.time[idx]) - 1
    e = train.event[idx].astype(float)
    heads = model.head_index(train.group[idx]) if model.n_heads > 1 else np.zeros(idx.size, np.int64)
    return k0, e, heads


def standard_step(kind, train: Dataset, config: TrainConfig, group_balanced=False) -> StepFn:
    domain = train.attribute_domain
    uniform = np.full(len(domain), 1.0 / max(len(domain), 1))

    def step(model, idx, epoch):
        k0, e, heads = _batch(model, train, idx)
        out, cache = forward(model, train.features[idx], heads)
        if not group_balanced:
            loss, d_out = base_objective(kind, out, k0, e, train.time[idx], config)
        else:
            found = group_losses(kind, out, k0, e, train.time[idx], train.group[idx], domain, config)
            loss, d_out = weighted_group_objective(found, uniform, out.shape)
        return loss, backward(model.params, cache, heads, d_out)

    return step


def train(model_kind: str, train: Dataset, val: Optional[Dataset], grid: TimeGrid,
          config: TrainConfig, group_balanced: bool = False):
    """Fit a base model.

    Returns ``(model, trace)``. ``group_balanced`` averages per-group batch
    losses with equal weights instead of averaging over records.
    """
    validate_training_set(model_kind, train, grid)
    model = init_model(model_kind, train.n_features, grid, config.hidden, config.seed)
    return fit(model, train, val, config, standard_step(model_kind, train, config, group_balanced))


# ----------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: SurvivalModel) -> dict:
    return {
        "format": "fairsurv-model",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "head_mode": model.head_mode,
        "grid": model.grid.cut_points.tolist(),
        "head_groups": list(model.head_groups),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.params.items()},
    }


def model_from_dict(d: dict) -> SurvivalModel:
    if d.get("format") != "fairsurv-model":
        raise ValueError("not a model checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()}
    return SurvivalModel(d["kind"], TimeGrid(d["grid"]), params, tuple(d["head_groups"]))


def save_model(model, path) -> None:
    from .fairness import EnsembleModel

    if isinstance(model, EnsembleModel):
        blob = model.to_dict()
    else:
        blob = model_to_dict(model)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_model(path):
    from .fairness import EnsembleModel

    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") == "fairsurv-ensemble":
        return EnsembleModel.from_dict(blob)
    return model_from_dict(blob)
