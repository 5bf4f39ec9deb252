"""Synthetic censored survival data from a small structural causal model.

Graph: ``A -> X_A``; ``Z -> X_Z``; ``Z -> T``; ``T, C -> (Y, Delta)``. Bias knobs
add edges from ``A`` (group ``"1"`` is the affected group):

=============  ===========================================================
``k_feat``     shifts the mean of ``X_Z`` along a fixed direction
``k_label``    rotates which latent direction drives event risk
``k_mi_y``     raises the signal-to-noise ratio of the ``Z -> T`` relation
``k_mi_delta`` makes censoring depend on a direction of ``X_Z``
``k_tte``      stretches the time axis
``k_cens``     lowers the censoring rate on the logit scale
=============  ===========================================================

All randomness is drawn before any knob is applied, so two configurations
that differ in one knob share every random draw (common random numbers).
Per group, event times come from a pool of discrete-hazard draws; the
censored/uncensored split of the pool is stratified by rank, and within each
stratum times are handed out in order of latent risk. This keeps each knob
acting on its own part of the joint distribution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import convolve1d
from scipy.special import expit, logit

from .core import Dataset

KNOBS = ("k_feat", "k_label", "k_mi_y", "k_mi_delta", "k_tte", "k_cens")
GROUPS = ("0", "1")


@dataclass
class SCMConfig:
    dim_z: int = 4
    dim_xz: int = 8
    dim_xa: int = 2
    p_a: float = 0.3
    noise_xz: float = 0.5
    noise_xa: float = 0.5
    embedding_scale: float = 0.5
    signal: float = 0.7
    censoring_rate: float = 0.3
    hazard: float = 0.15
    n_intervals: int = 20
    horizon: float = 10.0
    structure_seed: int = 0
    k_feat: float = 0.0
    k_label: float = 0.0
    k_mi_y: float = 0.0
    k_mi_delta: float = 0.0
    k_tte: float = 0.0
    k_cens: float = 0.0

    def __post_init__(self):
        for k in KNOBS:
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.dim_z < 3:
            raise ValueError("dim_z must be at least 3 (risk, alternative risk, censoring drivers)")
        if self.dim_xz < self.dim_z:
            raise ValueError("dim_xz must be at least dim_z")
        if not 0 < self.p_a < 1 or not 0 < self.censoring_rate < 1:
            raise ValueError("p_a and censoring_rate must lie in (0, 1)")
        if not 0 <= self.signal <= 1:
            raise ValueError("signal must lie in [0, 1]")
        if not 0 < self.hazard < 1 or self.n_intervals < 1 or self.horizon <= 0:
            raise ValueError("invalid hazard process settings")

    @property
    def xz_columns(self) -> list:
        return list(range(self.dim_xz))

    @property
    def xa_columns(self) -> list:
        return list(range(self.dim_xz, self.dim_xz + self.dim_xa))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SCMConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown SCM settings {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentSample:
    A: np.ndarray
    Z: np.ndarray
    X_Z: np.ndarray
    X_A: np.ndarray
    T: np.ndarray
    C: np.ndarray
    Y: np.ndarray
    Delta: np.ndarray
    risk: np.ndarray

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}


def _structure(config: SCMConfig):
    rng = np.random.default_rng(config.structure_seed)
    q, _ = np.linalg.qr(rng.normal(size=(config.dim_xz, config.dim_z)))
    shift = rng.normal(size=config.dim_xz)
    embed = rng.normal(size=config.dim_xa)
    return q, shift / np.linalg.norm(shift), config.embedding_scale * embed / np.linalg.norm(embed)


def signal_strength(config: SCMConfig, group: int) -> float:
    """Correlation of latent risk with its driving direction."""
    if group == 0:
        return config.signal
    return 1.0 - (1.0 - config.signal) / (1.0 + config.k_mi_y)


def censoring_rate(config: SCMConfig, group: int) -> float:
    if group == 0:
        return config.censoring_rate
    return float(expit(logit(config.censoring_rate) - config.k_cens))


def generate(config: SCMConfig, n: int, seed: int = 0):
    """Draw ``n`` records; returns ``(dataset, latent)``.

    Features are ``[X_Z, X_A]``. ``Y = min(T, C)`` and ``Delta = 1{T <= C}``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c = config
    rng = np.random.default_rng(seed)
    A = (rng.random(n) < c.p_a).astype(np.int64)
    Z = rng.normal(size=(n, c.dim_z))
    e_xz = rng.normal(size=(n, c.dim_xz))
    e_xa = rng.normal(size=(n, c.dim_xa))
    e_risk = rng.normal(size=n)
    u_cens = rng.random(n)
    u_time = rng.random(n)
    u_jitter = rng.random(n)
    u_ratio = rng.uniform(0.05, 0.95, size=n)

    q, shift, embed = _structure(c)
    X_Z = Z @ q.T + c.noise_xz * e_xz + c.k_feat * A[:, None] * shift[None, :]
    X_A = (2 * A[:, None] - 1) * embed[None, :] + c.noise_xa * e_xa

    theta = (np.pi / 2) * min(c.k_label, 1.0) * A
    rho = np.where(A == 1, signal_strength(c, 1), signal_strength(c, 0))
    risk = rho * (np.cos(theta) * Z[:, 0] + np.sin(theta) * Z[:, 1]) + np.sqrt(1 - rho ** 2) * e_risk

    # discrete hazard draws, jittered inside their interval
    width = c.horizon / c.n_intervals
    k = np.minimum(np.floor(np.log(u_time) / np.log1p(-c.hazard)), c.n_intervals - 1)
    latent_time = (k + u_jitter) * width

    # censoring priority: random, plus an X_Z direction for the affected group
    proj = (X_Z - c.k_feat * A[:, None] * shift[None, :]) @ q[:, 2] / np.sqrt(1 + c.noise_xz ** 2)
    priority = logit(u_cens) + c.k_mi_delta * A * proj

    T = np.empty(n)
    delta = np.ones(n, dtype=np.int64)
    for g in (0, 1):
        rows = np.flatnonzero(A == g)
        n_g = rows.size
        if n_g == 0:
            continue
        m_c = int(round(n_g * censoring_rate(c, g)))
        m_u = n_g - m_c
        censored = rows[np.argsort(-priority[rows], kind="stable")[:m_c]]
        delta[censored] = 0
        pool = np.sort(latent_time[rows])
        take = np.zeros(n_g, dtype=bool)
        if m_u:
            take[np.floor((np.arange(m_u) + 0.5) * n_g / m_u).astype(np.int64)] = True
        for stratum, times in ((rows[delta[rows] == 1], pool[take]), (rows[delta[rows] == 0], pool[~take])):
            order = stratum[np.argsort(-risk[stratum], kind="stable")]
            T[order] = times
    T = T * np.where(A == 1, 1.0 + c.k_tte, 1.0)
    C = np.where(delta == 1, T / u_ratio, T * u_ratio)
    Y = np.minimum(T, C)
    Delta = (T <= C).astype(np.int64)

    features = np.hstack([X_Z, X_A])
    ds = Dataset(np.array([f"s{i:06d}" for i in range(n)]), features, Y, Delta,
                 np.where(A == 1, "1", "0"), GROUPS)
    return ds, LatentSample(A, Z, X_Z, X_A, T, C, Y, Delta, risk)


# ----------------------------------------------------------------------------
# distribution shifts


def _target_rows(data: Dataset, target_group) -> np.ndarray:
    target_group = str(target_group)
    if target_group not in data.attribute_domain:
        raise ValueError(f"unknown group {target_group!r}")
    return np.flatnonzero(data.group == target_group)


def gaussian_kernel(width: float) -> np.ndarray:
    """Normalized discrete Gaussian with standard deviation ``width``,
    truncated at four standard deviations."""
    if width < 0:
        raise ValueError("kernel width must be nonnegative")
    if width == 0:
        return np.array([1.0])
    radius = max(1, int(np.ceil(4 * width)))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / width) ** 2)
    return k / k.sum()


def apply_shift_x(data: Dataset, target_group, kernel_width: float, columns=None) -> Dataset:
    """Blur the target group's feature vectors along the feature axis.

    Edges are handled by reflection (a constant vector stays constant).
    ``columns`` restricts the blur to a contiguous block of features.
    """
    kernel = gaussian_kernel(kernel_width)
    rows = _target_rows(data, target_group)
    if kernel.size == 1 or rows.size == 0:
        return data
    X = data.features.copy()
    cols = np.arange(data.n_features) if columns is None else np.asarray(columns)
    block = X[np.ix_(rows, cols)]
    X[np.ix_(rows, cols)] = convolve1d(block, kernel[::-1], axis=1, mode="reflect")
    return data.replace(features=X)


def apply_shift_y(data: Dataset, target_group, noise_halfwidth: float, seed: int = 0) -> Dataset:
    """Add ``Uniform(-w, w)`` noise to the target group's times, clamped at 0."""
    if noise_halfwidth < 0:
        raise ValueError("noise_halfwidth must be nonnegative")
    rows = _target_rows(data, target_group)
    if noise_halfwidth == 0 or rows.size == 0:
        return data
    noise = np.random.default_rng(seed).uniform(-noise_halfwidth, noise_halfwidth, size=rows.size)
    y = data.time.copy()
    y[rows] = np.maximum(y[rows] + noise, 0.0)
    return data.replace(time=y)


def apply_shift_delta(data: Dataset, target_group, flip_rate: float = 0.9, seed: int = 0) -> Dataset:
    """Mark ``floor(flip_rate * m)`` of the target group's ``m`` uncensored
    records as censored, chosen uniformly at random. Times are unchanged."""
    if not 0 <= flip_rate <= 1:
        raise ValueError("flip_rate must lie in [0, 1]")
    rows = _target_rows(data, target_group)
    eligible = rows[data.event[rows] == 1]
    n_flip = int(np.floor(flip_rate * eligible.size))
    if n_flip == 0:
        return data
    chosen = np.random.default_rng(seed).choice(eligible, size=n_flip, replace=False)
    event = data.event.copy()
    event[chosen] = 0
    return data.replace(event=event)


def save_latent(latent: LatentSample, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(latent.to_dict(), fh)
