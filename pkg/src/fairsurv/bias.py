"""Group-level bias-source scores and finite checks of the fairness bound and
of covariate-shift preservation under a sufficient representation.

The five scores compare groups pairwise and report the largest difference:

* ``bias_mi_xz_y``      - normalized MI between feature cells and event-time bins
* ``bias_mi_xz_delta``  - normalized MI between feature cells and the event indicator
* ``bias_tte``          - Wasserstein-1 between event-time distributions
* ``bias_feature``      - sliced Wasserstein-1 between feature distributions
* ``bias_censoring``    - relative difference of censoring rates
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from .core import Dataset

DEFAULT_BINS = 10
DEFAULT_PROJECTIONS = 100


def _domain(groups, domain=None):
    groups = np.asarray(groups).astype(str)
    if domain is None:
        domain = tuple(sorted(set(groups.tolist())))
    return groups, tuple(domain)


def _max_pairwise(values: dict) -> float:
    vals = list(values.values())
    return float(max(vals) - min(vals)) if len(vals) >= 2 else 0.0


# ----------------------------------------------------------------------------
# information


def entropy(labels) -> float:
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def normalized_mutual_information(a, b) -> float:
    """``2 I(a; b) / (H(a) + H(b))`` from the empirical joint, natural log.

    Defined as 0 when either variable is constant.
    """
    a, b = np.asarray(a), np.asarray(b)
    ha, hb = entropy(a), entropy(b)
    if ha <= 0 or hb <= 0:
        return 0.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= joint.sum()
    nz = joint > 0
    outer = joint.sum(axis=1, keepdims=True) @ joint.sum(axis=0, keepdims=True)
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return float(np.clip(2.0 * mi / (ha + hb), 0.0, 1.0))


def feature_cells(features, n_cells: int, seed: int = 0) -> np.ndarray:
    """Seeded k-means cell index of each row."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    k = min(n_cells, len(np.unique(X, axis=0)))
    if k <= 1:
        return np.zeros(X.shape[0], dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return KMeans(n_clusters=k, n_init=4, random_state=seed).fit_predict(X).astype(np.int64)


def quantile_bins(values, n_bins: int) -> np.ndarray:
    """Bin index from empirical quantiles; edges are data values, so the
    binning is unchanged by any increasing transform of ``values``."""
    values = np.asarray(values, dtype=float)
    edges = np.quantile(values, np.linspace(0, 1, n_bins + 1)[1:-1], method="inverted_cdf")
    return np.searchsorted(edges, values, side="left")


def _group_nmi(features, target, groups, domain, bins, seed, restrict=None, what=""):
    out = {}
    for g in domain:
        rows = np.flatnonzero(groups == g)
        keep = rows if restrict is None else rows[restrict[rows]]
        if keep.size < bins:
            raise ValueError(f"group {g!r} has {keep.size} usable records for {what}; need at least {bins}")
        cells = feature_cells(features[rows], bins, seed)
        pos = np.searchsorted(rows, keep)
        out[g] = normalized_mutual_information(cells[pos], target(keep))
    return out


def group_nmi_y(features, y, delta, groups, bins=DEFAULT_BINS, seed=0, domain=None) -> dict:
    groups, domain = _domain(groups, domain)
    features, y = np.asarray(features, dtype=float), np.asarray(y, dtype=float)
    uncensored = np.asarray(delta) == 1
    return _group_nmi(features, lambda k: quantile_bins(y[k], bins), groups, domain, bins, seed,
                      uncensored, "event-time information")


def group_nmi_delta(features, delta, groups, bins=DEFAULT_BINS, seed=0, domain=None) -> dict:
    groups, domain = _domain(groups, domain)
    delta = np.asarray(delta)
    return _group_nmi(np.asarray(features, dtype=float), lambda k: delta[k], groups, domain, bins, seed,
                      None, "event-indicator information")


def bias_mi_xz_y(features, y, delta, groups, bins=DEFAULT_BINS, seed=0, domain=None) -> float:
    """Largest between-group difference of NMI(feature cells; time bins),
    computed on uncensored records. Feature cells come from k-means on all of
    the group's records."""
    return _max_pairwise(group_nmi_y(features, y, delta, groups, bins, seed, domain))


def bias_mi_xz_delta(features, delta, groups, bins=DEFAULT_BINS, seed=0, domain=None) -> float:
    """Largest between-group difference of NMI(feature cells; event indicator)."""
    return _max_pairwise(group_nmi_delta(features, delta, groups, bins, seed, domain))


# ----------------------------------------------------------------------------
# transport


def wasserstein_1d(u, v) -> float:
    """Exact W1 between two empirical distributions: the integral of the
    absolute difference of their CDFs."""
    u = np.sort(np.asarray(u, dtype=float))
    v = np.sort(np.asarray(v, dtype=float))
    if u.size == 0 or v.size == 0:
        raise ValueError("empty sample")
    pts = np.concatenate([u, v])
    pts.sort(kind="mergesort")
    widths = np.diff(pts)
    cu = np.searchsorted(u, pts[:-1], side="right") / u.size
    cv = np.searchsorted(v, pts[:-1], side="right") / v.size
    return float(np.sum(np.abs(cu - cv) * widths))


def bias_tte(y, delta, groups, domain=None) -> float:
    """Largest pairwise W1 between groups' uncensored times, divided by the
    largest observed time."""
    groups, domain = _domain(groups, domain)
    y = np.asarray(y, dtype=float)
    ev = np.asarray(delta) == 1
    if len(domain) < 2:
        raise ValueError("need at least two groups")
    samples = {}
    for g in domain:
        t = y[(groups == g) & ev]
        if t.size == 0:
            raise ValueError(f"group {g!r} has no uncensored records")
        samples[g] = t
    scale = float(y.max())
    if scale <= 0:
        return 0.0
    return max(wasserstein_1d(samples[a], samples[b]) / scale
               for i, a in enumerate(domain) for b in domain[i + 1:])


def random_directions(dim: int, count: int, seed: int = 0) -> np.ndarray:
    d = np.random.default_rng(seed).normal(size=(count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def bias_feature(features, groups, projections=DEFAULT_PROJECTIONS, seed=0, domain=None,
                 directions=None) -> float:
    """Sliced W1 between group feature distributions.

    Each projection's W1 is divided by the range of the projected values of
    both groups together; projections with zero range contribute 0. The
    average over projections is maximized over group pairs.
    """
    groups, domain = _domain(groups, domain)
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(domain) < 2:
        raise ValueError("need at least two groups")
    for g in domain:
        if not np.any(groups == g):
            raise ValueError(f"group {g!r} is empty")
    dirs = random_directions(X.shape[1], projections, seed) if directions is None else np.atleast_2d(directions)
    proj = X @ dirs.T
    best = 0.0
    for i, a in enumerate(domain):
        for b in domain[i + 1:]:
            pa, pb = proj[groups == a], proj[groups == b]
            total = 0.0
            for k in range(dirs.shape[0]):
                lo = min(pa[:, k].min(), pb[:, k].min())
                hi = max(pa[:, k].max(), pb[:, k].max())
                if hi > lo:
                    total += wasserstein_1d(pa[:, k], pb[:, k]) / (hi - lo)
            best = max(best, total / dirs.shape[0])
    return float(best)


# ----------------------------------------------------------------------------
# censoring


def censoring_disparity_from_rates(group_rates: dict, overall: float) -> float:
    if overall <= 0:
        raise ValueError("overall censoring rate is 0; the disparity is undefined")
    vals = list(group_rates.values())
    return float((max(vals) - min(vals)) / overall)


def bias_censoring(delta, groups, domain=None) -> float:
    """Largest pairwise difference of group censoring rates over the overall rate."""
    groups, domain = _domain(groups, domain)
    c = 1.0 - np.asarray(delta, dtype=float)
    rates = {g: float(c[groups == g].mean()) for g in domain if np.any(groups == g)}
    return censoring_disparity_from_rates(rates, float(c.mean()))


# ----------------------------------------------------------------------------
# profile


@dataclass
class BiasProfile:
    bias_mi_xz_y: float
    bias_mi_xz_delta: float
    bias_tte: float
    bias_feature: float
    bias_censoring: float
    bins: int = DEFAULT_BINS
    projections: int = DEFAULT_PROJECTIONS
    seed: int = 0
    feature_columns: Optional[list] = None
    group_values: dict = field(default_factory=dict)

    SCORES = ("bias_mi_xz_y", "bias_mi_xz_delta", "bias_tte", "bias_feature", "bias_censoring")

    def scores(self) -> dict:
        return {k: getattr(self, k) for k in self.SCORES}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def row(self) -> dict:
        out = self.scores()
        out.update(bins=self.bins, projections=self.projections, seed=self.seed,
                   feature_columns=" ".join(map(str, self.feature_columns or [])))
        return out


def audit(data: Dataset, feature_columns: Optional[Sequence[int]] = None, bins: int = DEFAULT_BINS,
          projections: int = DEFAULT_PROJECTIONS, seed: int = 0) -> BiasProfile:
    """All five scores for one dataset and its sensitive attribute.

    ``feature_columns`` restricts the feature-based scores to a subset of
    columns (for example the attribute-independent block of a synthetic set).
    Groups without records are skipped.
    """
    cols = list(range(data.n_features)) if feature_columns is None else list(feature_columns)
    X = data.features[:, cols]
    domain = tuple(g for g, c in data.group_sizes().items() if c > 0)
    nmi_y = group_nmi_y(X, data.time, data.event, data.group, bins, seed, domain)
    nmi_d = group_nmi_delta(X, data.event, data.group, bins, seed, domain)
    c = 1.0 - data.event
    return BiasProfile(
        bias_mi_xz_y=_max_pairwise(nmi_y),
        bias_mi_xz_delta=_max_pairwise(nmi_d),
        bias_tte=bias_tte(data.time, data.event, data.group, domain),
        bias_feature=bias_feature(X, data.group, projections, seed, domain),
        bias_censoring=bias_censoring(data.event, data.group, domain),
        bins=bins, projections=projections, seed=seed, feature_columns=cols,
        group_values={"nmi_y": nmi_y, "nmi_delta": nmi_d,
                      "censoring_rate": {g: float(c[data.group == g].mean()) for g in domain}},
    )


# ----------------------------------------------------------------------------
# fairness bound on enumerable hypothesis classes


@dataclass
class ConstantPMFPredictor:
    """Predicts the same interval PMF for every input."""

    pmf: np.ndarray

    def survival(self, features) -> np.ndarray:
        pmf = np.asarray(self.pmf, dtype=float)
        n = np.asarray(features).shape[0]
        return np.tile(_pmf_survival(pmf[None, :]), (n, 1))


@dataclass
class StumpPredictor:
    """Chooses between two PMFs by thresholding one feature."""

    feature: int
    threshold: float
    pmf_left: np.ndarray
    pmf_right: np.ndarray

    def survival(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        right = X[:, self.feature] > self.threshold
        left_s = _pmf_survival(np.asarray(self.pmf_left, dtype=float)[None, :])[0]
        right_s = _pmf_survival(np.asarray(self.pmf_right, dtype=float)[None, :])[0]
        return np.where(right[:, None], right_s[None, :], left_s[None, :])


def _pmf_survival(pmf) -> np.ndarray:
    n, L = pmf.shape
    surv = np.empty((n, L + 1))
    surv[:, 0] = 1.0
    surv[:, 1:] = np.clip(1.0 - np.cumsum(pmf, axis=1), 0.0, 1.0)
    surv[:, L] = 0.0
    return surv


def _pairwise_curve_distance(curves: np.ndarray) -> np.ndarray:
    """``out[h, g]`` = mean absolute difference of hypothesis curves on one dataset."""
    H = curves.shape[0]
    out = np.empty((H, H))
    for h in range(H):
        out[h] = np.abs(curves[h][None] - curves).mean(axis=(1, 2))
    return out


@dataclass
class BoundCheck:
    description: str
    fairness: list
    eta: float
    discrepancy: float
    rhs: float
    holds: bool

    @property
    def worst_fairness(self) -> float:
        return float(max(self.fairness))


def verify_fairness_bound(features_a, features_b, hypotheses: Sequence, labeling_a, labeling_b,
                          description: str = "", tol: float = 1e-9) -> BoundCheck:
    """Enumerate a finite hypothesis class and check
    ``|Er(f_a, h, D_a) - Er(f_b, h, D_b)| <= eta + D`` for every ``h``.

    ``Er`` is the mean absolute curve distance. ``eta`` is the smallest joint
    error of any hypothesis against both labeling functions, ``D`` the
    largest difference of a hypothesis-pair distance between the two
    datasets.
    """
    if len(hypotheses) == 0:
        raise ValueError("hypothesis class is empty")
    ca = np.stack([h.survival(features_a) for h in hypotheses])
    cb = np.stack([h.survival(features_b) for h in hypotheses])
    fa = labeling_a.survival(features_a)
    fb = labeling_b.survival(features_b)
    err_a = np.abs(ca - fa[None]).mean(axis=(1, 2))
    err_b = np.abs(cb - fb[None]).mean(axis=(1, 2))
    fairness = np.abs(err_a - err_b)
    eta = float(np.min(err_a + err_b))
    disc = float(np.max(np.abs(_pairwise_curve_distance(ca) - _pairwise_curve_distance(cb))))
    rhs = eta + disc
    return BoundCheck(description or f"{len(hypotheses)} hypotheses", fairness.tolist(), eta, disc, rhs,
                      bool(fairness.max() <= rhs + tol))


# ----------------------------------------------------------------------------
# covariate-shift preservation on discrete tables


@dataclass
class ShiftPreservationCheck:
    preconditions_met: bool
    holds: Optional[bool]
    max_deviation: Optional[float]
    sufficient_group: Optional[int] = None
    reason: str = ""


def _mi(joint) -> float:
    joint = joint / joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    pt = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ pt)[nz])))


def _conditional_rows(table):
    mass = table.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(mass > 0, table / np.where(mass > 0, mass, 1.0), 0.0), mass[..., 0]


def verify_covariate_shift_preservation(joint, representation, tol: float = 1e-9) -> ShiftPreservationCheck:
    """Exact check that a representation sufficient in one group transfers
    a shared ``P(t | x)`` to a shared ``P(t | z)``.

    ``joint[a, x, t]`` is the full joint table; ``representation[x]`` the
    cell ``z`` of each ``x``. Preconditions: the table is a distribution;
    ``P(t | x, a)`` does not depend on ``a``; for some group ``a*``,
    ``I(Z; T | a*) = I(X; T | a*)``; and every other group's ``x``-support
    lies inside that of ``a*`` (needed so that sufficiency observed in
    ``a*`` constrains the other groups). The result reports the largest
    total-variation gap between ``P(t | z, a)`` and ``P(t | z)``.
    """
    P = np.asarray(joint, dtype=float)
    g = np.asarray(representation, dtype=np.int64)
    if P.ndim != 3 or g.shape != (P.shape[1],):
        raise ValueError("joint must be (groups, x, t) and representation must map every x")
    if np.any(P < 0) or abs(P.sum() - 1.0) > tol:
        return ShiftPreservationCheck(False, None, None, reason="table is not a probability distribution")
    cond_xa, mass_xa = _conditional_rows(P)
    cond_x, _ = _conditional_rows(P.sum(axis=0))
    dev = np.abs(cond_xa - cond_x[None]).max(axis=-1)
    if np.any(dev[mass_xa > 0] > tol):
        return ShiftPreservationCheck(False, None, None, reason="P(t|x,a) depends on a (no covariate shift)")
    n_z = int(g.max()) + 1
    onehot = np.zeros((P.shape[1], n_z))
    onehot[np.arange(P.shape[1]), g] = 1.0
    PZ = np.einsum("axt,xz->azt", P, onehot)
    support = mass_xa > 0
    sufficient = None
    for a in range(P.shape[0]):
        if P[a].sum() <= 0:
            continue
        if abs(_mi(PZ[a]) - _mi(P[a])) <= tol and np.all(~support | support[a][None]):
            sufficient = a
            break
    if sufficient is None:
        return ShiftPreservationCheck(False, None, None,
                                      reason="no group with a sufficient representation covering all supports")
    cond_za, mass_za = _conditional_rows(PZ)
    cond_z, _ = _conditional_rows(PZ.sum(axis=0))
    tv = 0.5 * np.abs(cond_za - cond_z[None]).sum(axis=-1)
    max_dev = float(tv[mass_za > 0].max())
    return ShiftPreservationCheck(True, max_dev <= tol, max_dev, sufficient)


def random_shift_table(rng: np.random.Generator, n_groups=2, n_x=4, n_z=2, n_t=2,
                       sufficient=True) -> tuple:
    """Random ``(joint, representation)`` with a shared ``P(t | x)``.

    With ``sufficient=True``, ``P(t | x)`` depends on ``x`` only through its
    cell so the representation is sufficient; otherwise labels vary within
    cells.
    """
    rep = np.concatenate([np.arange(n_z), rng.integers(0, n_z, size=n_x - n_z)])
    rng.shuffle(rep)
    if sufficient:
        per_cell = rng.dirichlet(np.ones(n_t), size=n_z)
        p_t_x = per_cell[rep]
    else:
        p_t_x = rng.dirichlet(np.ones(n_t), size=n_x)
    p_a = rng.dirichlet(np.ones(n_groups))
    p_x_a = rng.dirichlet(np.ones(n_x), size=n_groups)
    joint = p_a[:, None, None] * p_x_a[:, :, None] * p_t_x[None]
    return joint / joint.sum(), rep
