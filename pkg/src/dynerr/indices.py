"""Local dynamical indices estimated from threshold exceedances.

The instantaneous dimension d comes from the exponential (zero-shape
generalized Pareto) fit of the exceedance magnitudes: the maximum-likelihood
scale is the sample mean, and d = 1/scale. The inverse persistence theta is
the Süveges maximum-likelihood extremal-index estimate computed from the
inter-exceedance times, clamped into (0, 1]. A chi-squared test over
equiprobable exponential bins reports the quality of the fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from .attractor import (
    DEFAULT_QUANTILE,
    MIN_EXCEEDANCES,
    ExceedanceSet,
    ReferenceAttractor,
    iter_exceedance_chunks,
)
from .core import TrajectoryDataset

__all__ = [
    "DynamicalIndices",
    "GofResult",
    "local_dimension",
    "inverse_persistence",
    "gpd_fit_test",
    "compute_indices",
    "write_indices_csv",
]

_GOF_BINS = 10
_GOF_MIN_EXPECTED = 5.0


@dataclass(frozen=True)
class GofResult:
    """Chi-squared goodness-of-fit outcome for the exponential exceedance model."""

    statistic: float
    dof: int
    p_value: float
    n_bins_used: int

    def __post_init__(self):
        if self.statistic < 0:
            raise ValueError("chi-squared statistic must be non-negative")
        if self.dof < 1:
            raise ValueError("dof must be at least 1")
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError("p-value must lie in [0, 1]")


@dataclass(frozen=True)
class DynamicalIndices:
    """Per-state arrays of d, theta and validity flags (NaN where invalid)."""

    d: np.ndarray
    theta: np.ndarray
    valid: np.ndarray
    q: float
    n_exceedances: np.ndarray
    gof_p: np.ndarray

    def __post_init__(self):
        n = self.d.shape[0]
        for name in ("theta", "valid", "n_exceedances", "gof_p"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length mismatch: {getattr(self, name).shape[0]} vs {n}")
        ok = self.valid
        if ok.any():
            if not (self.d[ok] > 0).all():
                raise ValueError("valid states must have d > 0")
            th = self.theta[ok]
            if not ((th > 0) & (th <= 1)).all():
                raise ValueError("valid states must have theta in (0, 1]")

    def __len__(self) -> int:
        return self.d.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


def _dimension_from_u(u: np.ndarray) -> float:
    sigma = float(np.mean(u))
    if sigma == 0.0:
        raise ValueError("all exceedances are zero; exponential fit is degenerate")
    return 1.0 / sigma


def local_dimension(exc: ExceedanceSet) -> float:
    """d = 1 / mean(u): reciprocal of the ML exponential scale of the exceedances."""
    if len(exc) < MIN_EXCEEDANCES:
        raise ValueError(f"need at least {MIN_EXCEEDANCES} exceedances, got {len(exc)}")
    return _dimension_from_u(exc.u)


def _theta_from_times(times: np.ndarray, q: float) -> float:
    n_times = times.shape[0]
    gaps = np.diff(times)
    spacings = gaps - 1  # S_i: zero for consecutive exceedances
    n_gaps = n_times - 1
    n_clusters = int((spacings > 0).sum())
    a = (1.0 - q) * float(spacings.sum())
    if a == 0.0:
        # one unbroken cluster: maximal persistence floor
        theta = 1.0 / n_times
    else:
        b = a + n_gaps + n_clusters
        disc = b * b - 8.0 * n_clusters * a
        if disc < 0.0:
            disc = 0.0
        theta = (b - math.sqrt(disc)) / (2.0 * a)
    if theta > 1.0:
        theta = 1.0
    elif theta <= 0.0:
        theta = 1.0 / n_times
    return theta


def inverse_persistence(exc: ExceedanceSet, q: float | None = None) -> float:
    """Süveges ML extremal-index estimate from the exceedance times.

    With p = 1 - q, S_i the inter-exceedance gaps minus one, N the number of
    gaps, N_c the count of positive S_i and A = p * sum(S_i):

        theta = (A + N + N_c - sqrt((A + N + N_c)^2 - 8 N_c A)) / (2 A)

    A = 0 (a single unbroken cluster) returns the 1/len(times) floor; the
    result is clamped into (0, 1].
    """
    if len(exc) < 2:
        raise ValueError(f"need at least 2 exceedance times, got {len(exc)}")
    return _theta_from_times(exc.times, exc.q if q is None else q)


def _merge_bins(obs: np.ndarray, exp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # greedy left-to-right merge until every expected count reaches the floor
    obs_m: list[float] = []
    exp_m: list[float] = []
    acc_o = 0.0
    acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= _GOF_MIN_EXPECTED:
            obs_m.append(acc_o)
            exp_m.append(acc_e)
            acc_o = 0.0
            acc_e = 0.0
    if acc_e > 0.0:
        if obs_m:
            obs_m[-1] += acc_o
            exp_m[-1] += acc_e
        else:
            obs_m.append(acc_o)
            exp_m.append(acc_e)
    return np.array(obs_m), np.array(exp_m)


def _gof_from_u(u: np.ndarray) -> tuple[float, int, int] | None:
    n = u.shape[0]
    sigma = float(np.mean(u))
    if sigma == 0.0:
        return None
    edges = np.empty(_GOF_BINS + 1)
    for k in range(_GOF_BINS):
        edges[k] = -sigma * math.log1p(-k / _GOF_BINS)
    edges[0] = 0.0
    edges[_GOF_BINS] = np.inf
    obs = np.histogram(u, bins=edges)[0].astype(np.float64)
    exp = np.full(_GOF_BINS, n / _GOF_BINS)
    obs_m, exp_m = _merge_bins(obs, exp)
    if obs_m.shape[0] < 3:
        return None
    stat = float(((obs_m - exp_m) ** 2 / exp_m).sum())
    return stat, obs_m.shape[0] - 2, obs_m.shape[0]


def gpd_fit_test(exc: ExceedanceSet) -> GofResult | None:
    """Chi-squared fit test of the exponential exceedance model.

    The magnitudes are counted in 10 equiprobable bins of the fitted
    exponential (edges -sigma*ln(1 - k/10)); adjacent bins are merged until
    every expected count is at least 5, and one degree of freedom is charged
    for the estimated scale. Returns None when fewer than 3 bins survive
    merging (test not applicable).
    """
    if len(exc) < MIN_EXCEEDANCES:
        raise ValueError(f"need at least {MIN_EXCEEDANCES} exceedances, got {len(exc)}")
    res = _gof_from_u(exc.u)
    if res is None:
        return None
    stat, dof, n_bins = res
    return GofResult(stat, dof, float(sstats.chi2.sf(stat, dof)), n_bins)


def compute_indices(
    ref: ReferenceAttractor,
    queries: TrajectoryDataset,
    q: float = DEFAULT_QUANTILE,
    chunk_size: int | None = None,
) -> DynamicalIndices:
    """d, theta and fit quality for every query state against the reference.

    Streams the batch exceedance scan in bounded-memory chunks and applies the
    same estimators as the single-state path. States with too few finite g
    values or fewer than the minimum exceedances are flagged invalid and carry
    NaN placeholders; aggregates downstream must skip them.
    """
    n = queries.n_times
    d = np.full(n, np.nan)
    theta = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    n_exc = np.zeros(n, dtype=np.int64)
    gof_stat = np.full(n, np.nan)
    gof_dof = np.zeros(n, dtype=np.int64)
    for off, u, t, counts, gq, nf, status in iter_exceedance_chunks(ref, queries.states, q, chunk_size):
        for row in range(counts.shape[0]):
            i = off + row
            cnt = int(counts[row])
            n_exc[i] = cnt
            if status[row] != 0 or cnt < MIN_EXCEEDANCES:
                continue
            u_row = u[row, :cnt]
            d[i] = _dimension_from_u(u_row)
            theta[i] = _theta_from_times(t[row, :cnt], q)
            gof = _gof_from_u(u_row)
            if gof is not None:
                gof_stat[i], gof_dof[i] = gof[0], gof[1]
            valid[i] = True
    gof_p = np.full(n, np.nan)
    have = gof_dof > 0
    if have.any():
        gof_p[have] = sstats.chi2.sf(gof_stat[have], gof_dof[have])
    return DynamicalIndices(d=d, theta=theta, valid=valid, q=q, n_exceedances=n_exc, gof_p=gof_p)


def write_indices_csv(indices: DynamicalIndices, path, dataset: TrajectoryDataset | None = None) -> None:
    """Write one row per query state: index,time,d,theta,valid,n_exceedances,gof_p."""
    times = dataset.times() if dataset is not None else np.arange(len(indices), dtype=np.float64)
    lines = ["index,time,d,theta,valid,n_exceedances,gof_p"]
    for i in range(len(indices)):
        lines.append(
            f"{i},{times[i]:.17g},{indices.d[i]:.17g},{indices.theta[i]:.17g},"
            f"{int(indices.valid[i])},{indices.n_exceedances[i]},{indices.gof_p[i]:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
