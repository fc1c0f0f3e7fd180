"""Reference attractor and threshold exceedances of the closeness observable.

For a query state z and reference states x_t, the observable is
``g_t = -log ||x_t - z||``. Close returns of the reference trajectory to z
show up as exceedances of g over its empirical q-quantile; those exceedances
(and the time indices where they occur) are the raw material for the local
dimension and inverse-persistence estimators.

Exact matches (zero distance, g = +inf) are excluded from both the quantile
and the exceedance set, so querying with states drawn from the reference
itself behaves like asking how the trajectory revisits that neighborhood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import TrajectoryDataset

__all__ = [
    "DEFAULT_QUANTILE",
    "MIN_EXCEEDANCES",
    "MIN_FINITE",
    "ReferenceAttractor",
    "ExceedanceSet",
    "InsufficientExceedances",
    "build_reference",
    "neg_log_distance_series",
    "exceedances",
    "batch_exceedances",
]

DEFAULT_QUANTILE = 0.98
MIN_EXCEEDANCES = 30
MIN_FINITE = 100
_MIN_REFERENCE = 100


class InsufficientExceedances(ValueError):
    """Too few threshold exceedances for a stable fit; carries the count."""

    def __init__(self, count: int, minimum: int = MIN_EXCEEDANCES):
        self.count = int(count)
        self.minimum = int(minimum)
        super().__init__(f"only {count} exceedances, need at least {minimum}")


@dataclass(frozen=True)
class ReferenceAttractor:
    """Immutable reference states against which all indices are computed."""

    states: np.ndarray
    dt: float
    normalized: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(self.states, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"reference states must be 2-D, got ndim={arr.ndim}")
        if arr.shape[0] < _MIN_REFERENCE:
            raise ValueError(
                f"reference needs at least {_MIN_REFERENCE} states for quantile estimation, got {arr.shape[0]}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("reference states contain non-finite values")
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)

    @property
    def n_ref(self) -> int:
        return self.states.shape[0]

    @property
    def n_states(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class ExceedanceSet:
    """Threshold exceedances of g for one query state.

    ``u[i] = g(times[i]) - g_q > 0`` and ``times`` is strictly increasing;
    ``n_finite`` counts the finite g values that entered the quantile.
    """

    query_id: int
    g_q: float
    q: float
    u: np.ndarray
    times: np.ndarray
    n_finite: int

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        times = np.ascontiguousarray(self.times, dtype=np.int64)
        if u.shape != times.shape or u.ndim != 1:
            raise ValueError(f"u and times must be equal-length vectors, got {u.shape} vs {times.shape}")
        if u.size and (np.diff(times) <= 0).any():
            raise ValueError("times must be strictly increasing")
        if u.size and u.min() < 0:
            raise ValueError("exceedance magnitudes must be non-negative")
        if not (0.0 < self.q < 1.0):
            raise ValueError(f"quantile must lie in (0, 1), got {self.q}")
        u.flags.writeable = False
        times.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return self.u.size


def build_reference(train: TrajectoryDataset, normalized: bool = False) -> ReferenceAttractor:
    """Wrap a training split as the reference attractor."""
    return ReferenceAttractor(states=train.states, dt=train.dt, normalized=normalized)


def neg_log_distance_series(ref: ReferenceAttractor, query: np.ndarray) -> np.ndarray:
    """g_t = -log of the Euclidean distance from ``query`` to each reference row.

    Zero distances produce +inf entries, which downstream operations exclude.
    """
    query = np.ascontiguousarray(query, dtype=np.float64).ravel()
    if query.size != ref.n_states:
        raise ValueError(f"query has {query.size} components, reference rows have {ref.n_states}")
    return _kernels.g_series(ref.states, query)


def _quantile_anchors(g_finite_part: np.ndarray, nf: int, q: float) -> tuple[float, float, float]:
    # type-7 quantile: interpolate between the adjacent order statistics
    h = (nf - 1) * q
    k = int(h)
    frac = h - k
    g_k = float(g_finite_part[k])
    g_k1 = float(g_finite_part[k + 1 :].min()) if k + 1 < nf else g_k
    return g_k, g_k1, frac


def exceedances(g: np.ndarray, q: float, query_id: int = 0) -> ExceedanceSet:
    """Strict exceedances of g over its empirical q-quantile (type 7).

    Infinite entries (self matches) are excluded from both the quantile and
    the exceedance set. Raises :class:`InsufficientExceedances` when fewer
    than ``MIN_EXCEEDANCES`` values exceed the threshold.
    """
    g = np.asarray(g, dtype=np.float64).ravel()
    if not (0.5 < q < 1.0):
        raise ValueError(f"quantile must lie in (0.5, 1), got {q}")
    finite = np.isfinite(g)
    nf = int(finite.sum())
    if nf < MIN_FINITE:
        raise ValueError(f"need at least {MIN_FINITE} finite g values, got {nf}")
    gf = g[finite] if nf < g.size else g
    h = (nf - 1) * q
    k = int(h)
    part = np.partition(gf, k)
    g_k, g_k1, frac = _quantile_anchors(part, nf, q)
    g_q = g_k + frac * (g_k1 - g_k)
    mask = finite & (g > g_q)
    times = np.nonzero(mask)[0].astype(np.int64)
    if times.size < MIN_EXCEEDANCES:
        raise InsufficientExceedances(times.size)
    u = g[mask] - g_q
    return ExceedanceSet(query_id=query_id, g_q=float(g_q), q=q, u=u, times=times, n_finite=nf)


def _auto_chunk(n_ref: int, cap: int, n_queries: int) -> int:
    # keep per-chunk kernel output near ~128 MB
    budget = 8 * 1024 * 1024  # doubles
    chunk = max(1, budget // max(1, cap))
    return int(min(n_queries, chunk, 4096))


def iter_exceedance_chunks(ref: ReferenceAttractor, states: np.ndarray, q: float, chunk_size: int | None = None):
    """Yield (offset, u_matrix, times_matrix, counts, g_q, n_finite, status) per chunk.

    Raw driver for the batch kernel; rows of ``u_matrix``/``times_matrix`` are
    valid up to ``counts``. Status 0 means the scan succeeded (the count may
    still be below ``MIN_EXCEEDANCES``), 1 means too few finite g values.
    """
    states = np.ascontiguousarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != ref.n_states:
        raise ValueError(f"queries must be [n, {ref.n_states}], got {states.shape}")
    if not (0.5 < q < 1.0):
        raise ValueError(f"quantile must lie in (0.5, 1), got {q}")
    cap = _kernels.exceedance_cap(ref.n_ref, q)
    if chunk_size is None:
        chunk_size = _auto_chunk(ref.n_ref, cap, states.shape[0])
    threads = _kernels.set_kernel_threads()
    ref_t = None if ref.n_states == 3 else np.ascontiguousarray(ref.states.T)
    for off in range(0, states.shape[0], chunk_size):
        block = states[off : off + chunk_size]
        stripes = min(block.shape[0], threads * 4)
        u, t, counts, gq, nf, status = _kernels.batch_exceedance_scan(
            ref.states, ref_t, block, q, cap, MIN_FINITE, stripes
        )
        yield off, u, t, counts, gq, nf, status


def batch_exceedances(
    ref: ReferenceAttractor,
    queries: TrajectoryDataset,
    q: float = DEFAULT_QUANTILE,
    chunk_size: int | None = None,
) -> list[ExceedanceSet | None]:
    """Exceedance sets for every row of ``queries``; invalid states yield None.

    Element i equals ``exceedances(neg_log_distance_series(ref, row_i), q)``
    bit for bit; queries that fail the finite-count or minimum-exceedance
    rules are flagged with None instead of aborting the batch. Results do not
    depend on execution order or thread count.
    """
    out: list[ExceedanceSet | None] = []
    for off, u, t, counts, gq, nf, status in iter_exceedance_chunks(ref, queries.states, q, chunk_size):
        for row in range(counts.shape[0]):
            cnt = int(counts[row])
            if status[row] != 0 or cnt < MIN_EXCEEDANCES:
                out.append(None)
                continue
            out.append(
                ExceedanceSet(
                    query_id=off + row,
                    g_q=float(gq[row]),
                    q=q,
                    u=u[row, :cnt].copy(),
                    times=t[row, :cnt].copy(),
                    n_finite=int(nf[row]),
                )
            )
    return out
