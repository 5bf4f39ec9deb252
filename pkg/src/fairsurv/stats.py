"""Nonparametric tests: Wilcoxon signed-rank, Friedman, Nemenyi post-hoc."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

EXACT_MAX_PAIRS = 25

# Studentized range quantiles divided by sqrt(2), infinite degrees of freedom,
# for k = 2..20 treatments.
NEMENYI_Q = {
    0.05: (1.9600, 2.3437, 2.5690, 2.7278, 2.8497, 2.9483, 3.0309, 3.1017, 3.1637, 3.2187,
           3.2680, 3.3127, 3.3536, 3.3912, 3.4260, 3.4584, 3.4887, 3.5171, 3.5438),
    0.10: (1.6449, 2.0523, 2.2913, 2.4595, 2.5885, 2.6927, 2.7799, 2.8546, 2.9199, 2.9778,
           3.0297, 3.0767, 3.1197, 3.1592, 3.1957, 3.2297, 3.2615, 3.2912, 3.3192),
}


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_used: int
    method: str
    degenerate: bool = False


def signed_rank_distribution(doubled_ranks) -> np.ndarray:
    """Null distribution of the doubled positive-rank sum.

    Entry ``s`` is the probability that the signed ranks give ``W+ = s / 2``
    when every sign is a fair coin flip.
    """
    doubled_ranks = np.asarray(doubled_ranks, dtype=np.int64)
    counts = np.zeros(int(doubled_ranks.sum()) + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts / 2.0 ** doubled_ranks.size


def wilcoxon_signed_rank(u, v=None, alternative: str = "two_sided") -> WilcoxonResult:
    """Signed-rank test on paired samples (or on differences when ``v`` is None).

    Zero differences are dropped; ties get midranks. ``W+`` is the sum of
    ranks of positive differences; ``greater`` tests for ``u > v``. The exact
    null distribution is used for up to 25 nonzero pairs, otherwise a normal
    approximation with tie and continuity corrections.
    """
    if alternative not in ("two_sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(u, dtype=float) if v is None else np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    if d.size == 0 or not np.all(np.isfinite(d)):
        raise ValueError("need at least one finite paired difference")
    d = d[d != 0]
    m = d.size
    if m == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", True)
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if m <= EXACT_MAX_PAIRS:
        doubled = np.rint(2 * ranks).astype(np.int64)
        pmf = signed_rank_distribution(doubled)
        obs = int(round(2 * w_plus))
        p_ge = float(pmf[obs:].sum())
        p_le = float(pmf[:obs + 1].sum())
        method = "exact"
    else:
        _, tie_counts = np.unique(ranks, return_counts=True)
        mean = m * (m + 1) / 4.0
        var = m * (m + 1) * (2 * m + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        sd = np.sqrt(var)
        p_ge = float(sps.norm.sf((w_plus - mean - 0.5) / sd))
        p_le = float(sps.norm.cdf((w_plus - mean + 0.5) / sd))
        method = "normal"
    if alternative == "greater":
        p = p_ge
    elif alternative == "less":
        p = p_le
    else:
        p = 2.0 * min(p_ge, p_le)
    return WilcoxonResult(w_plus, min(1.0, p), m, method)


def _check_matrix(matrix) -> np.ndarray:
    """Rows are blocks, columns are treatments."""
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 blocks (rows) and 2 treatments (columns)")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    return x


def mean_ranks(matrix) -> np.ndarray:
    x = _check_matrix(matrix)
    return sps.rankdata(x, axis=1).mean(axis=0)


@dataclass
class FriedmanResult:
    statistic: float
    p_value: float
    mean_ranks: list


def friedman_test(matrix) -> FriedmanResult:
    """Friedman chi-square over within-block midranks (no tie correction)."""
    x = _check_matrix(matrix)
    n, k = x.shape
    rbar = mean_ranks(x)
    chi2 = 12.0 * n / (k * (k + 1)) * float(np.sum((rbar - (k + 1) / 2.0) ** 2))
    p = float(sps.chi2.sf(chi2, k - 1)) if chi2 > 0 else 1.0
    return FriedmanResult(chi2, p, rbar.tolist())


def critical_difference(k: int, n: int, alpha: float = 0.05) -> float:
    if alpha not in NEMENYI_Q:
        raise ValueError(f"alpha must be one of {sorted(NEMENYI_Q)}")
    if not 2 <= k <= 20:
        raise ValueError("tabulated critical values cover 2..20 treatments")
    return NEMENYI_Q[alpha][k - 2] * np.sqrt(k * (k + 1) / (6.0 * n))


@dataclass
class NemenyiResult:
    mean_ranks: list
    p_values: list
    critical_difference: float
    alpha: float
    n_blocks: int
    labels: list = field(default_factory=list)

    def cd_diagram(self) -> dict:
        """Mean ranks, CD and the pairs whose rank gap is below CD."""
        k = len(self.mean_ranks)
        labels = self.labels or [str(i) for i in range(k)]
        links = [[labels[i], labels[j]] for i in range(k) for j in range(i + 1, k)
                 if abs(self.mean_ranks[i] - self.mean_ranks[j]) < self.critical_difference]
        return {"mean_ranks": dict(zip(labels, self.mean_ranks)), "critical_difference": self.critical_difference,
                "alpha": self.alpha, "n_blocks": self.n_blocks, "k": k, "not_different": links}

    def to_dict(self) -> dict:
        return asdict(self)


def nemenyi_posthoc(matrix, alpha: float = 0.05, labels=()) -> NemenyiResult:
    """Pairwise Nemenyi p-values from the studentized range distribution."""
    x = _check_matrix(matrix)
    n, k = x.shape
    rbar = mean_ranks(x)
    se = np.sqrt(k * (k + 1) / (6.0 * n))
    q = np.abs(rbar[:, None] - rbar[None, :]) / se * np.sqrt(2.0)
    p = np.ones((k, k))
    iu = np.triu_indices(k, 1)
    vals = np.where(q[iu] > 0, sps.studentized_range.sf(q[iu], k, np.inf), 1.0)
    p[iu] = np.clip(vals, 0.0, 1.0)
    p[(iu[1], iu[0])] = p[iu]
    return NemenyiResult(rbar.tolist(), p.tolist(), float(critical_difference(k, n, alpha)), alpha, n,
                         list(labels))
