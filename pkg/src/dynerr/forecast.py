"""Baseline forecasters and direct / recursive evaluation protocols.

Two stand-in predictors exercise the full evaluation pipeline end to end:

* persistence -- repeat the last observed state;
* analog -- find the k reference windows closest (Euclidean, flattened) to
  the query window and average the states n steps past each match.

``direct_eval`` scores fixed-lead forecasts over a test set;
``recursive_rollout`` feeds predictions back step by step; ``rollout_study``
runs an ensemble of rollouts and evaluates state errors, index errors,
transport distances and quadrant diagnostics at chosen horizons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._kernels import resolve_threads
from .attractor import DEFAULT_QUANTILE, ReferenceAttractor
from .core import TrajectoryDataset
from .generators import TimeScale
from .indices import compute_indices
from .metrics import (
    EvaluationReport,
    ForecastPair,
    build_report,
    per_state_squared_error,
)

__all__ = [
    "ForecastTask",
    "Forecaster",
    "RolloutCrash",
    "RolloutStudyEntry",
    "persistence_forecast",
    "analog_forecast",
    "direct_eval",
    "recursive_rollout",
    "rollout_study",
    "write_rollout_csv",
]


@dataclass(frozen=True)
class ForecastTask:
    """Input length m, lead time n and output length l, all in steps."""

    m: int
    n: int
    l: int = 1

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.l < 1:
            raise ValueError(f"m, n, l must all be >= 1, got {self}")


class RolloutCrash(RuntimeError):
    """A recursive forecast produced a non-finite state.

    ``crash_step`` is the index of the first bad predicted row (0-based);
    ``partial`` holds the rows predicted before the crash.
    """

    def __init__(self, crash_step: int, partial: np.ndarray):
        self.crash_step = int(crash_step)
        self.partial = partial
        super().__init__(f"non-finite forecast state at rollout step {crash_step}")


@dataclass
class Forecaster:
    """Baseline predictor: ``kind`` is 'persistence' or 'analog'.

    Analog forecasters carry the neighbor count and the reference attractor.
    An exact nearest-neighbor tree over the flattened reference windows is
    cached per (window length, candidate count).
    """

    kind: str
    k: int = 1
    reference: ReferenceAttractor | None = None
    _tree_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("persistence", "analog"):
            raise ValueError(f"kind must be 'persistence' or 'analog', got {self.kind!r}")
        if self.kind == "analog":
            if self.k < 1:
                raise ValueError(f"neighbor count must be >= 1, got {self.k}")
            if self.reference is None:
                raise ValueError("analog forecaster needs a reference attractor")

    @classmethod
    def persistence(cls) -> "Forecaster":
        return cls(kind="persistence")

    @classmethod
    def analog(cls, reference: ReferenceAttractor, k: int = 3) -> "Forecaster":
        return cls(kind="analog", k=k, reference=reference)

    def _tree(self, m: int, n_cand: int) -> cKDTree:
        key = (m, n_cand)
        tree = self._tree_cache.get(key)
        if tree is None:
            states = self.reference.states
            view = np.lib.stride_tricks.sliding_window_view(states, (m, states.shape[1]))
            flat = np.ascontiguousarray(view.reshape(-1, m * states.shape[1])[:n_cand])
            tree = cKDTree(flat)
            self._tree_cache[key] = tree
        return tree

    def forecast_batch(self, windows: np.ndarray, n: int, exclude_overlap_at: np.ndarray | None = None) -> np.ndarray:
        """Predict the state n steps past the end of each [m, n_s] window."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None, :, :]
        if windows.ndim != 3:
            raise ValueError(f"windows must be [batch, m, n_s], got shape {windows.shape}")
        if self.kind == "persistence":
            return windows[:, -1, :].copy()
        return _analog_batch(self, windows, n, exclude_overlap_at)

    def forecast(self, window: np.ndarray, n: int) -> np.ndarray:
        return self.forecast_batch(np.asarray(window)[None, :, :], n)[0]


def persistence_forecast(window: np.ndarray, n: int) -> np.ndarray:
    """The last row of the window, regardless of lead time."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 1:
        raise ValueError(f"window must be a non-empty [m, n_s] matrix, got shape {window.shape}")
    if n < 1:
        raise ValueError(f"lead time must be >= 1, got {n}")
    return window[-1].copy()


def analog_forecast(
    forecaster: Forecaster,
    window: np.ndarray,
    n: int,
    exclude_overlap_at: int | None = None,
) -> np.ndarray:
    """Average of the reference states n steps after the k closest windows.

    ``exclude_overlap_at`` gives the window's own start position when the
    query originates from the reference (self-match prevention for
    train-on-train diagnostics); test queries leave it None.
    """
    if forecaster.kind != "analog":
        raise ValueError("forecaster is not an analog forecaster")
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError(f"window must be [m, n_s], got shape {window.shape}")
    excl = None
    if exclude_overlap_at is not None:
        excl = np.array([exclude_overlap_at], dtype=np.int64)
    return forecaster.forecast_batch(window[None, :, :], n, exclude_overlap_at=excl)[0]


def _analog_batch(
    fc: Forecaster,
    windows: np.ndarray,
    n: int,
    exclude_overlap_at: np.ndarray | None,
) -> np.ndarray:
    m = windows.shape[1]
    n_s = windows.shape[2]
    if n_s != fc.reference.n_states:
        raise ValueError(f"window has {n_s} state components, reference has {fc.reference.n_states}")
    if n < 1:
        raise ValueError(f"lead time must be >= 1, got {n}")
    ref_states = fc.reference.states
    # candidate start p predicts row p + m - 1 + n, which must exist
    n_cand = ref_states.shape[0] - m - n + 1
    if n_cand < 1:
        raise ValueError(f"no admissible candidate positions (reference length {ref_states.shape[0]}, m={m}, n={n})")
    if fc.k > n_cand:
        raise ValueError(f"k={fc.k} exceeds the {n_cand} admissible candidate positions")
    tree = fc._tree(m, n_cand)
    batch = windows.shape[0]
    queries = windows.reshape(batch, m * n_s)
    workers = resolve_threads()
    if exclude_overlap_at is None:
        pos = tree.query(queries, k=fc.k, workers=workers)[1].reshape(batch, fc.k)
    else:
        # over-query so that dropping the <= 2m-1 overlapping positions still leaves k
        k_eff = min(n_cand, fc.k + 2 * m - 1)
        idx = tree.query(queries, k=k_eff, workers=workers)[1].reshape(batch, k_eff)
        lo = exclude_overlap_at - (m - 1)
        hi = exclude_overlap_at + (m - 1)
        pos = np.empty((batch, fc.k), dtype=np.int64)
        for b in range(batch):
            keep = idx[b][(idx[b] < lo[b]) | (idx[b] > hi[b])]
            if keep.size < fc.k:
                raise ValueError("fewer than k admissible candidate positions after overlap exclusion")
            pos[b] = keep[: fc.k]
    # average retrieved successors in ascending-position order (deterministic
    # summation regardless of retrieval order)
    pos = np.sort(pos, axis=1)
    succ = ref_states[pos + (m - 1 + n)]  # [batch, k, n_s]
    return succ.mean(axis=1)


def direct_eval(forecaster: Forecaster, test: TrajectoryDataset, task: ForecastTask) -> ForecastPair:
    """Forecast every admissible window of the test set at lead ``task.n``.

    Pair i predicts test row i + m - 1 + n from the window starting at row i;
    start indices are set so absolute times line up with the test set.
    """
    m, n = task.m, task.n
    n_pairs = test.n_times - m - n + 1
    if n_pairs < 1:
        raise ValueError(f"test set of {test.n_times} rows admits no windows with m={m}, n={n}")
    view = np.lib.stride_tricks.sliding_window_view(test.states, (m, test.n_states))
    windows = view.reshape(test.n_times - m + 1, m, test.n_states)[:n_pairs]
    preds = forecaster.forecast_batch(np.ascontiguousarray(windows), n)
    truth = test.states[m - 1 + n :]
    offset = test.start_index + m - 1 + n
    return ForecastPair(
        pred=TrajectoryDataset(f"{test.name}-pred", test.dt, preds, offset),
        truth=TrajectoryDataset(f"{test.name}-truth", test.dt, truth, offset),
        lead_steps=n,
    )


def recursive_rollout(
    forecaster: Forecaster,
    init_window: np.ndarray,
    steps: int,
    dt: float = 1.0,
    start_index: int = 0,
) -> TrajectoryDataset:
    """Iterated one-step forecasting: predict, append, slide the window.

    Returns the ``steps`` predicted rows. A non-finite prediction aborts with
    :class:`RolloutCrash` carrying the partial trajectory and the crash step.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    window = np.array(init_window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError(f"init_window must be [m, n_s], got shape {window.shape}")
    out = np.empty((steps, window.shape[1]))
    for step in range(steps):
        pred = forecaster.forecast_batch(window[None, :, :], 1)[0]
        if not np.isfinite(pred).all():
            raise RolloutCrash(step, out[:step].copy())
        out[step] = pred
        window = np.vstack([window[1:], pred[None, :]]) if window.shape[0] > 1 else pred[None, :]
    return TrajectoryDataset("rollout", dt, out, start_index)


@dataclass(frozen=True)
class RolloutStudyEntry:
    """Ensemble evaluation at one rollout horizon."""

    step: int
    lt: float
    mean_mse: float
    std_mse: float
    survivors: int
    report: EvaluationReport | None


def _ensemble_rollout(fc: Forecaster, windows: np.ndarray, steps: int, eval_steps: np.ndarray):
    """Roll all starts forward together; record states at the eval steps.

    Returns (recorded [n_eval, n_starts, n_s], crashed_at [n_starts]) where
    crashed_at is the 0-based first non-finite step, or ``steps`` if none.
    """
    n_starts, m, n_s = windows.shape
    recorded = np.full((eval_steps.shape[0], n_starts, n_s), np.nan)
    crashed_at = np.full(n_starts, steps, dtype=np.int64)
    current = np.array(windows, dtype=np.float64)
    alive = np.ones(n_starts, dtype=bool)
    eval_lookup = {int(s): i for i, s in enumerate(eval_steps)}
    for step in range(1, steps + 1):
        if not alive.any():
            break
        preds = np.full((n_starts, n_s), np.nan)
        preds[alive] = fc.forecast_batch(current[alive], 1)
        bad = alive & ~np.isfinite(preds).all(axis=1)
        if bad.any():
            crashed_at[bad] = step - 1
            alive &= ~bad
        slot = eval_lookup.get(step)
        if slot is not None:
            recorded[slot, alive] = preds[alive]
        if m > 1:
            current[alive, :-1] = current[alive, 1:]
        current[alive, -1] = preds[alive]
    return recorded, crashed_at


def rollout_study(
    forecaster: Forecaster,
    test: TrajectoryDataset,
    m: int,
    steps: int,
    n_starts: int,
    eval_times: np.ndarray,
    ref: ReferenceAttractor,
    q: float = DEFAULT_QUANTILE,
    n_bins: int = 10,
    time_scale: TimeScale | None = None,
) -> list[RolloutStudyEntry]:
    """Recursive-forecast ensemble evaluated at the given step horizons.

    Starts are ``n_starts`` evenly spaced admissible windows of the test set
    (deterministic, no seed). Crashed trajectories contribute only up to
    their crash step; surviving counts are reported per horizon.
    """
    eval_steps = np.unique(np.asarray(eval_times, dtype=np.int64))
    if eval_steps.size == 0 or eval_steps.min() < 1 or eval_steps.max() > steps:
        raise ValueError(f"eval steps must lie in [1, {steps}], got {eval_times}")
    admissible = test.n_times - m - steps + 1
    if admissible < n_starts:
        raise ValueError(f"only {admissible} admissible starts for {n_starts} requested")
    starts = (np.arange(n_starts, dtype=np.int64) * admissible) // n_starts
    windows = np.stack([test.states[s : s + m] for s in starts])
    recorded, crashed_at = _ensemble_rollout(forecaster, windows, steps, eval_steps)
    entries: list[RolloutStudyEntry] = []
    lt_units = time_scale.lt_model_units if time_scale is not None else None
    for slot, step in enumerate(eval_steps):
        step = int(step)
        surv = crashed_at >= step
        n_surv = int(surv.sum())
        lt = (step * test.dt / lt_units) if lt_units else float("nan")
        if n_surv == 0:
            entries.append(RolloutStudyEntry(step, lt, float("nan"), float("nan"), 0, None))
            continue
        pred_states = recorded[slot, surv]
        truth_rows = starts[surv] + (m - 1 + step)
        truth_states = test.states[truth_rows]
        offset = test.start_index + m - 1 + step
        pair = ForecastPair(
            pred=TrajectoryDataset("rollout-pred", test.dt, pred_states, offset),
            truth=TrajectoryDataset("rollout-truth", test.dt, truth_states, offset),
            lead_steps=step,
        )
        errs = per_state_squared_error(pair)
        pred_idx = compute_indices(ref, pair.pred, q)
        true_idx = compute_indices(ref, pair.truth, q)
        joint = int((pred_idx.valid & true_idx.valid).sum())
        report = None
        if n_surv >= 2 and joint >= 1 and pred_idx.n_valid >= 2 and true_idx.n_valid >= 2:
            bins = min(n_bins, true_idx.n_valid)
            report = build_report(pair, pred_idx, true_idx, n_bins=bins)
        entries.append(
            RolloutStudyEntry(
                step=step,
                lt=lt,
                mean_mse=float(errs.mean()),
                std_mse=float(errs.std()),
                survivors=n_surv,
                report=report,
            )
        )
    return entries


def write_rollout_csv(entries: list[RolloutStudyEntry], path) -> None:
    """One row per horizon: step,lt,mean_mse,std_mse,mse_d,mse_theta,wd,survivors."""
    lines = ["step,lt,mean_mse,std_mse,mse_d,mse_theta,wd,survivors"]
    for e in entries:
        mse_d = e.report.mse_d if e.report is not None else float("nan")
        mse_theta = e.report.mse_theta if e.report is not None else float("nan")
        wd = e.report.wd if e.report is not None else float("nan")
        lines.append(
            f"{e.step},{e.lt:.17g},{e.mean_mse:.17g},{e.std_mse:.17g},"
            f"{mse_d:.17g},{mse_theta:.17g},{wd:.17g},{e.survivors}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
