"""Forecast error metrics: standard, index-based, signed diagnostics, transport.

Alongside the usual MSE/MAE family (and normalized variants) this module
measures how well a forecast preserves local dynamics: squared/absolute
errors of the per-state indices d and theta, signed per-state differences
(quadrant diagnostics), and the 1-D Wasserstein distance between the
predicted and true index distributions, combined as a root sum of squares.

Index-based metrics are restricted to states valid in BOTH index sets; the
report records how many states were skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import NormStats, TrajectoryDataset
from .indices import DynamicalIndices

__all__ = [
    "ForecastPair",
    "DidSample",
    "DidSamples",
    "BinnedErrorCurve",
    "EvaluationReport",
    "state_error",
    "per_state_squared_error",
    "di_error",
    "did",
    "wasserstein_1d",
    "combined_wd",
    "lat_weighted_rmse",
    "quantile_bin_errors",
    "build_report",
    "write_curve_csv",
]


@dataclass(frozen=True)
class ForecastPair:
    """Aligned predicted and true trajectories at a fixed lead time."""

    pred: TrajectoryDataset
    truth: TrajectoryDataset
    lead_steps: int = 1

    def __post_init__(self):
        if self.pred.states.shape != self.truth.states.shape:
            raise ValueError(
                f"pred/truth shape mismatch: {self.pred.states.shape} vs {self.truth.states.shape}"
            )
        if self.pred.dt != self.truth.dt:
            raise ValueError(f"pred/truth dt mismatch: {self.pred.dt} vs {self.truth.dt}")
        if self.lead_steps < 1:
            raise ValueError(f"lead_steps must be >= 1, got {self.lead_steps}")

    @property
    def n_times(self) -> int:
        return self.pred.n_times


class DidSample(NamedTuple):
    did_d: float
    did_theta: float
    mse_state: float


@dataclass(frozen=True)
class DidSamples:
    """Signed per-state index differences paired with the state squared error."""

    did_d: np.ndarray
    did_theta: np.ndarray
    mse_state: np.ndarray

    def __post_init__(self):
        if not (self.did_d.shape == self.did_theta.shape == self.mse_state.shape):
            raise ValueError("component arrays must share one shape")

    def __len__(self) -> int:
        return self.did_d.shape[0]

    def __getitem__(self, i: int) -> DidSample:
        return DidSample(float(self.did_d[i]), float(self.did_theta[i]), float(self.mse_state[i]))

    def quadrant_percentages(self) -> tuple[float, float, float, float]:
        """Percent of samples per sign quadrant, ordered (++, +-, -+, --).

        Zero differences count toward the positive side, so the four
        percentages always sum to 100.
        """
        n = len(self)
        if n == 0:
            raise ValueError("no samples to classify")
        dpos = self.did_d >= 0
        tpos = self.did_theta >= 0
        pp = float((dpos & tpos).sum()) * 100.0 / n
        pm = float((dpos & ~tpos).sum()) * 100.0 / n
        mp = float((~dpos & tpos).sum()) * 100.0 / n
        mm = float((~dpos & ~tpos).sum()) * 100.0 / n
        return pp, pm, mp, mm


@dataclass(frozen=True)
class BinnedErrorCurve:
    """Mean error per rank bin of a conditioning index.

    ``bin_edges`` holds the conditioning-index values at the bin boundaries
    (first entry = smallest value, last = largest).
    """

    n_bins: int
    bin_edges: np.ndarray
    mean_error: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        if self.bin_edges.shape[0] != self.n_bins + 1:
            raise ValueError("bin_edges must have n_bins + 1 entries")
        if self.mean_error.shape[0] != self.n_bins or self.count.shape[0] != self.n_bins:
            raise ValueError("mean_error and count must have n_bins entries")


_STATE_KINDS = ("mse", "nmse", "mae", "nmae")


def state_error(pair: ForecastPair, kind: str = "mse", norm: NormStats | None = None) -> float:
    """Standard forecast error over all entries of the pair.

    MSE/MAE average the squared/absolute entrywise differences; NMSE divides
    MSE by the variance of the truth and NMAE divides MAE by its mean. The
    normalizers come from the truth portion of the pair unless ``norm``
    supplies precomputed statistics.
    """
    if kind not in _STATE_KINDS:
        raise ValueError(f"kind must be one of {_STATE_KINDS}, got {kind!r}")
    diff = pair.pred.states - pair.truth.states
    if kind in ("mse", "nmse"):
        base = float(np.mean(diff * diff))
        if kind == "mse":
            return base
        sigma = norm.std if norm is not None else float(pair.truth.states.std())
        if sigma == 0.0:
            raise ValueError("NMSE undefined: truth standard deviation is zero")
        return base / (sigma * sigma)
    base = float(np.mean(np.abs(diff)))
    if kind == "mae":
        return base
    mu = norm.mean if norm is not None else float(pair.truth.states.mean())
    if mu == 0.0:
        raise ValueError("NMAE undefined: truth mean is zero")
    return base / mu


def per_state_squared_error(pair: ForecastPair) -> np.ndarray:
    """Squared error of each snapshot, averaged over the state components."""
    diff = pair.pred.states - pair.truth.states
    return np.mean(diff * diff, axis=1)


def _joint_valid(pred_idx: DynamicalIndices, true_idx: DynamicalIndices) -> np.ndarray:
    if len(pred_idx) != len(true_idx):
        raise ValueError(f"index sets differ in length: {len(pred_idx)} vs {len(true_idx)}")
    return pred_idx.valid & true_idx.valid


def di_error(
    pred_idx: DynamicalIndices,
    true_idx: DynamicalIndices,
    kind: str = "mse",
    which: str = "d",
) -> float:
    """Index error over jointly-valid states.

    Normalized variants divide by the variance (NMSE) or mean (NMAE) of the
    true index restricted to the same states.
    """
    if kind not in _STATE_KINDS:
        raise ValueError(f"kind must be one of {_STATE_KINDS}, got {kind!r}")
    if which not in ("d", "theta"):
        raise ValueError(f"which must be 'd' or 'theta', got {which!r}")
    mask = _joint_valid(pred_idx, true_idx)
    if not mask.any():
        raise ValueError("no jointly-valid states")
    hat = getattr(pred_idx, which)[mask]
    true = getattr(true_idx, which)[mask]
    diff = hat - true
    if kind in ("mse", "nmse"):
        base = float(np.mean(diff * diff))
        if kind == "mse":
            return base
        var = float(true.var())
        if var == 0.0:
            raise ValueError(f"NMSE_{which} undefined: true index variance is zero")
        return base / var
    base = float(np.mean(np.abs(diff)))
    if kind == "mae":
        return base
    mu = float(true.mean())
    if mu == 0.0:
        raise ValueError(f"NMAE_{which} undefined: true index mean is zero")
    return base / mu


def did(
    pred_idx: DynamicalIndices,
    true_idx: DynamicalIndices,
    per_state_err: np.ndarray,
) -> DidSamples:
    """Signed per-state differences (d_hat - d, theta_hat - theta) with errors."""
    mask = _joint_valid(pred_idx, true_idx)
    per_state_err = np.asarray(per_state_err, dtype=np.float64)
    if per_state_err.shape[0] != len(pred_idx):
        raise ValueError("per-state error length mismatch")
    return DidSamples(
        did_d=pred_idx.d[mask] - true_idx.d[mask],
        did_theta=pred_idx.theta[mask] - true_idx.theta[mask],
        mse_state=per_state_err[mask],
    )


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> float:
    """1-D optimal-transport distance between equal-weight empirical samples.

    Integrates the absolute difference of the two empirical CDFs over the
    merged support; for equal sample sizes this equals the mean absolute
    difference of the sorted samples.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    support = np.sort(np.concatenate([a_sorted, b_sorted]))
    deltas = np.diff(support)
    cdf_a = np.searchsorted(a_sorted, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b_sorted, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def combined_wd(pred_idx: DynamicalIndices, true_idx: DynamicalIndices) -> tuple[float, float, float]:
    """(wd, wd_d, wd_theta): transport distances between index distributions.

    Each marginal uses the set's own valid states as an equal-weight
    empirical distribution; the combined value is sqrt(wd_d^2 + wd_theta^2).
    """
    if not pred_idx.valid.any() or not true_idx.valid.any():
        raise ValueError("both index sets need at least one valid state")
    wd_d = wasserstein_1d(pred_idx.d[pred_idx.valid], true_idx.d[true_idx.valid])
    wd_theta = wasserstein_1d(pred_idx.theta[pred_idx.valid], true_idx.theta[true_idx.valid])
    return float(np.hypot(wd_d, wd_theta)), wd_d, wd_theta


def lat_weighted_rmse(pred: np.ndarray, truth: np.ndarray, lats: np.ndarray) -> float:
    """Latitude-weighted RMSE over [n_samples, n_lat, n_lon] fields.

    Weights are cos(lat) normalized by their mean over latitudes. The
    weighted sum inside each sample's square root is not divided by the grid
    size, so absolute magnitudes differ from grid-averaged conventions.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    lats = np.asarray(lats, dtype=np.float64).ravel()
    if pred.shape != truth.shape or pred.ndim != 3:
        raise ValueError(f"pred/truth must share a 3-D shape, got {pred.shape} vs {truth.shape}")
    if lats.size != pred.shape[1]:
        raise ValueError(f"got {lats.size} latitudes for {pred.shape[1]} rows")
    if np.abs(lats).max() > 90.0:
        raise ValueError("latitudes must lie in [-90, 90] degrees")
    raw = np.cos(np.radians(lats))
    denom = raw.mean()
    if denom < 1e-12:
        raise ValueError("all latitude weights are (numerically) zero")
    weights = raw / denom
    sq = (pred - truth) ** 2
    per_sample = np.sqrt(np.einsum("ijk,j->i", sq, weights))
    return float(per_sample.mean())


def quantile_bin_errors(index_values: np.ndarray, errors: np.ndarray, n_bins: int = 10) -> BinnedErrorCurve:
    """Mean error per rank bin of the conditioning index.

    Samples are stably sorted by (index value, original position) and split
    into near-equal rank bins; leftover samples are spread one per bin from
    the top. Non-finite samples are dropped first.
    """
    index_values = np.asarray(index_values, dtype=np.float64).ravel()
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if index_values.shape != errors.shape:
        raise ValueError("index values and errors must have equal length")
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    keep = np.isfinite(index_values) & np.isfinite(errors)
    vals = index_values[keep]
    errs = errors[keep]
    n = vals.size
    if n < n_bins:
        raise ValueError(f"need at least {n_bins} valid samples, got {n}")
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    errs = errs[order]
    base = n // n_bins
    rem = n % n_bins
    sizes = np.full(n_bins, base, dtype=np.int64)
    if rem:
        sizes[-rem:] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    mean_error = np.array([errs[bounds[i] : bounds[i + 1]].mean() for i in range(n_bins)])
    edges = np.empty(n_bins + 1)
    edges[0] = vals[0]
    edges[-1] = vals[-1]
    for i in range(1, n_bins):
        edges[i] = vals[bounds[i]]
    return BinnedErrorCurve(n_bins=n_bins, bin_edges=edges, mean_error=mean_error, count=sizes)


@dataclass(frozen=True)
class EvaluationReport:
    """Bundle of standard metrics, index metrics, transport distances and curves."""

    mse: float
    nmse: float
    mae: float
    nmae: float
    mse_d: float
    mse_theta: float
    nmse_d: float
    nmse_theta: float
    mae_d: float
    mae_theta: float
    nmae_d: float
    nmae_theta: float
    wd: float
    wd_d: float
    wd_theta: float
    mean_d_pred: float
    mean_theta_pred: float
    mean_d_true: float
    mean_theta_true: float
    did: DidSamples
    curves: dict = field(default_factory=dict)
    n_valid: int = 0
    n_skipped: int = 0

    def to_dict(self) -> dict:
        out = {}
        for name in (
            "mse", "nmse", "mae", "nmae",
            "mse_d", "mse_theta", "nmse_d", "nmse_theta",
            "mae_d", "mae_theta", "nmae_d", "nmae_theta",
            "wd", "wd_d", "wd_theta",
            "mean_d_pred", "mean_theta_pred", "mean_d_true", "mean_theta_true",
        ):
            out[name] = getattr(self, name)
        out["did"] = [
            {"did_d": float(a), "did_theta": float(b), "mse_state": float(c)}
            for a, b, c in zip(self.did.did_d, self.did.did_theta, self.did.mse_state)
        ]
        out["curves"] = {
            key: {
                "n_bins": curve.n_bins,
                "bin_edges": curve.bin_edges.tolist(),
                "mean_error": curve.mean_error.tolist(),
                "count": curve.count.tolist(),
            }
            for key, curve in self.curves.items()
        }
        out["n_valid"] = self.n_valid
        out["n_skipped"] = self.n_skipped
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        scalars = {k: v for k, v in data.items() if k not in ("did", "curves")}
        samples = data["did"]
        did_samples = DidSamples(
            did_d=np.array([s["did_d"] for s in samples], dtype=np.float64),
            did_theta=np.array([s["did_theta"] for s in samples], dtype=np.float64),
            mse_state=np.array([s["mse_state"] for s in samples], dtype=np.float64),
        )
        curves = {
            key: BinnedErrorCurve(
                n_bins=int(c["n_bins"]),
                bin_edges=np.array(c["bin_edges"], dtype=np.float64),
                mean_error=np.array(c["mean_error"], dtype=np.float64),
                count=np.array(c["count"], dtype=np.int64),
            )
            for key, c in data["curves"].items()
        }
        return cls(did=did_samples, curves=curves, **scalars)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "EvaluationReport":
        path = Path(source)
        text = path.read_text() if path.exists() else str(source)
        return cls.from_dict(json.loads(text))


def build_report(
    pair: ForecastPair,
    pred_idx: DynamicalIndices,
    true_idx: DynamicalIndices,
    norm: NormStats | None = None,
    n_bins: int = 10,
) -> EvaluationReport:
    """Evaluate a forecast pair with its index sets into a full report.

    Binned error curves condition the per-state squared error on the TRUE
    state indices (d and theta).
    """
    if len(pred_idx) != pair.n_times or len(true_idx) != pair.n_times:
        raise ValueError("index sets must have one entry per forecast pair row")
    errs = per_state_squared_error(pair)
    mask = _joint_valid(pred_idx, true_idx)
    wd, wd_d, wd_theta = combined_wd(pred_idx, true_idx)
    curves = {
        "d": quantile_bin_errors(np.where(true_idx.valid, true_idx.d, np.nan), errs, n_bins),
        "theta": quantile_bin_errors(np.where(true_idx.valid, true_idx.theta, np.nan), errs, n_bins),
    }
    return EvaluationReport(
        mse=state_error(pair, "mse"),
        nmse=state_error(pair, "nmse", norm),
        mae=state_error(pair, "mae"),
        nmae=state_error(pair, "nmae", norm),
        mse_d=di_error(pred_idx, true_idx, "mse", "d"),
        mse_theta=di_error(pred_idx, true_idx, "mse", "theta"),
        nmse_d=di_error(pred_idx, true_idx, "nmse", "d"),
        nmse_theta=di_error(pred_idx, true_idx, "nmse", "theta"),
        mae_d=di_error(pred_idx, true_idx, "mae", "d"),
        mae_theta=di_error(pred_idx, true_idx, "mae", "theta"),
        nmae_d=di_error(pred_idx, true_idx, "nmae", "d"),
        nmae_theta=di_error(pred_idx, true_idx, "nmae", "theta"),
        wd=wd,
        wd_d=wd_d,
        wd_theta=wd_theta,
        mean_d_pred=float(pred_idx.d[pred_idx.valid].mean()),
        mean_theta_pred=float(pred_idx.theta[pred_idx.valid].mean()),
        mean_d_true=float(true_idx.d[true_idx.valid].mean()),
        mean_theta_true=float(true_idx.theta[true_idx.valid].mean()),
        did=did(pred_idx, true_idx, errs),
        curves=curves,
        n_valid=int(mask.sum()),
        n_skipped=int(pair.n_times - mask.sum()),
    )


def write_curve_csv(curve: BinnedErrorCurve, path) -> None:
    """Write bin,quantile_lo,quantile_hi,mean_error,count rows for one curve."""
    total = int(curve.count.sum())
    lines = ["bin,quantile_lo,quantile_hi,mean_error,count"]
    cum = 0
    for i in range(curve.n_bins):
        lo = cum / total
        cum += int(curve.count[i])
        hi = cum / total
        lines.append(f"{i},{lo:.17g},{hi:.17g},{curve.mean_error[i]:.17g},{curve.count[i]}")
    Path(path).write_text("\n".join(lines) + "\n")
