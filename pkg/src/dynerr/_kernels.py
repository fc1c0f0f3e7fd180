"""Compiled kernels for distance scans, exceedance extraction and window search.

The distance arithmetic is pinned down exactly: every squared distance is a
left-to-right sequential sum of squared coordinate differences, and every
negative-log value is ``-log(sqrt(s))`` evaluated with scalar libm calls.
The batch kernels reproduce the single-query path bit for bit; they only
reorganize the selection work (pivot screening in squared-distance space,
with exact comparisons in g space for every candidate) so the full distance
row never has to be sorted.

Thread count is capped by the ``DYNERR_THREADS`` environment variable.
"""

from __future__ import annotations

import math
import os

import numpy as np
import numba
from numba import njit, prange

__all__ = [
    "resolve_threads",
    "set_kernel_threads",
    "exceedance_cap",
    "g_series",
    "batch_exceedance_scan",
]


def resolve_threads() -> int:
    """Number of worker threads: numba's launch maximum, capped by DYNERR_THREADS."""
    limit = numba.config.NUMBA_NUM_THREADS
    env = os.environ.get("DYNERR_THREADS")
    if env:
        try:
            limit = min(limit, max(1, int(env)))
        except ValueError:
            pass
    return max(1, limit)


def set_kernel_threads() -> int:
    n = resolve_threads()
    numba.set_num_threads(n)
    return n


def exceedance_cap(n_ref: int, q: float) -> int:
    """Upper bound on strict exceedances over the type-7 q-quantile of n_ref values."""
    return int(n_ref - 1 - math.floor((n_ref - 1) * q)) + 2


@njit(cache=True)
def g_series(ref: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Negative log Euclidean distance from ``query`` to every reference row.

    Exact zero distance yields +inf; callers must filter those entries.
    """
    n, ns = ref.shape
    g = np.empty(n)
    for t in range(n):
        s = 0.0
        for j in range(ns):
            d = ref[t, j] - query[j]
            s += d * d
        if s == 0.0:
            g[t] = np.inf
        else:
            g[t] = -math.log(math.sqrt(s))
    return g


@njit(cache=True)
def _extract_exact(sbuf, tbuf, cnt, screen, g_q, cap, u_row, t_row):
    # exact membership test in g space over the screened candidates (t ascending)
    cntu = 0
    for idx in range(cnt):
        s = sbuf[idx]
        if 0.0 < s <= screen:
            g = -math.log(math.sqrt(s))
            if g > g_q:
                if cntu >= cap:
                    return -1
                u_row[cntu] = g - g_q
                t_row[cntu] = tbuf[idx]
                cntu += 1
    return cntu


@njit(cache=True)
def _anchors_to_gq(s_r1, s_r0, r1, frac):
    g_k = -math.log(math.sqrt(s_r1))
    g_k1 = -math.log(math.sqrt(s_r0)) if r1 >= 1 else g_k
    return g_k + frac * (g_k1 - g_k)


@njit(cache=True)
def _screen_bound(s_r1):
    screen = s_r1 * (1.0 + 1e-9)
    if screen <= s_r1:
        screen = np.nextafter(np.nextafter(np.nextafter(s_r1, np.inf), np.inf), np.inf)
    return screen


@njit(cache=True)
def _select_extract(srow, q, cap, min_finite, sbuf, tbuf, u_row, t_row):
    """Quantile anchors and exact exceedance extraction for one distance row.

    Returns (count, g_q, n_finite, status): status 0 = ok, 1 = too few
    finite values, 4 = output capacity overflow (not expected).
    """
    n = srow.shape[0]
    bufcap = sbuf.shape[0]
    # pivot guess from a strided sample: aim slightly above the needed rank
    stride = n // 2048
    if stride < 1:
        stride = 1
    m = 1 + (n - 1) // stride
    sample = np.empty(m)
    for idx in range(m):
        sample[idx] = srow[idx * stride]
    srank = int(1.3 * (cap + 16) * m / n) + 2
    if srank >= m:
        srank = m - 1
    p_hat = np.partition(sample, srank)[srank]
    attempts = 0
    while attempts < 12:
        attempts += 1
        cnt = 0
        overflow = False
        for t in range(n):
            s = srow[t]
            if s < p_hat:
                if cnt >= bufcap:
                    overflow = True
                    break
                sbuf[cnt] = s
                tbuf[cnt] = t
                cnt += 1
        if overflow:
            p_hat *= 0.5
            continue
        nzero = 0
        for idx in range(cnt):
            if sbuf[idx] == 0.0:
                nzero += 1
        nf = n - nzero
        if p_hat > 0.0 and nf < min_finite:
            return 0, np.nan, nf, 1
        h = (nf - 1) * q
        k = int(h)
        frac = h - k
        r1 = nf - 1 - k
        rank = nzero + r1
        if cnt < rank + 1:
            if p_hat <= 0.0:
                p_hat = 1e-300
            p_hat *= 4.0
            continue
        part = np.partition(sbuf[:cnt], rank)
        s_r1 = part[rank]
        s_r0 = part[0]
        for idx in range(1, rank):
            if part[idx] > s_r0:
                s_r0 = part[idx]
        g_q = _anchors_to_gq(s_r1, s_r0, r1, frac)
        screen = _screen_bound(s_r1)
        if screen >= p_hat:
            p_hat = screen * 2.0
            continue
        cntu = _extract_exact(sbuf, tbuf, cnt, screen, g_q, cap, u_row, t_row)
        if cntu < 0:
            return 0, np.nan, nf, 4
        return cntu, g_q, nf, 0
    # exact fallback for pathological value distributions: full partition
    nzero = 0
    for t in range(n):
        if srow[t] == 0.0:
            nzero += 1
    nf = n - nzero
    if nf < min_finite:
        return 0, np.nan, nf, 1
    h = (nf - 1) * q
    k = int(h)
    frac = h - k
    r1 = nf - 1 - k
    rank = nzero + r1
    part = np.partition(srow, rank)
    s_r1 = part[rank]
    s_r0 = part[0]
    for idx in range(1, rank):
        if part[idx] > s_r0:
            s_r0 = part[idx]
    g_q = _anchors_to_gq(s_r1, s_r0, r1, frac)
    screen = _screen_bound(s_r1)
    cntu = 0
    for t in range(n):
        s = srow[t]
        if 0.0 < s <= screen:
            g = -math.log(math.sqrt(s))
            if g > g_q:
                if cntu >= cap:
                    return 0, np.nan, nf, 4
                u_row[cntu] = g - g_q
                t_row[cntu] = t
                cntu += 1
    return cntu, g_q, nf, 0


@njit(parallel=True, cache=True)
def _scan_state3(ref, queries, q, cap, min_finite, n_stripes, u_out, t_out, counts, gq_out, nf_out, status):
    # three-component states: fused, branch-free distance pass
    nq = queries.shape[0]
    n = ref.shape[0]
    bufcap = u_out.shape[1] * 4 + 64
    if bufcap > n:
        bufcap = n
    for stripe in prange(n_stripes):
        srow = np.empty(n)
        sbuf = np.empty(bufcap)
        tbuf = np.empty(bufcap, np.int64)
        for i in range(stripe, nq, n_stripes):
            q0 = queries[i, 0]
            q1 = queries[i, 1]
            q2 = queries[i, 2]
            for t in range(n):
                d0 = ref[t, 0] - q0
                d1 = ref[t, 1] - q1
                d2 = ref[t, 2] - q2
                s = d0 * d0
                s += d1 * d1
                s += d2 * d2
                srow[t] = s
            cnt, gq, nf, st = _select_extract(srow, q, cap, min_finite, sbuf, tbuf, u_out[i], t_out[i])
            counts[i] = cnt
            gq_out[i] = gq
            nf_out[i] = nf
            status[i] = st


@njit(parallel=True, cache=True)
def _scan_generic(refT, queries, q, cap, min_finite, n_stripes, u_out, t_out, counts, gq_out, nf_out, status):
    # any state width: accumulate one coordinate per contiguous column pass,
    # preserving the sequential per-distance summation order
    nq = queries.shape[0]
    ns, n = refT.shape
    bufcap = u_out.shape[1] * 4 + 64
    if bufcap > n:
        bufcap = n
    for stripe in prange(n_stripes):
        srow = np.empty(n)
        sbuf = np.empty(bufcap)
        tbuf = np.empty(bufcap, np.int64)
        for i in range(stripe, nq, n_stripes):
            row0 = refT[0]
            q0 = queries[i, 0]
            for t in range(n):
                d = row0[t] - q0
                srow[t] = d * d
            for j in range(1, ns):
                rowj = refT[j]
                qj = queries[i, j]
                for t in range(n):
                    d = rowj[t] - qj
                    srow[t] += d * d
            cnt, gq, nf, st = _select_extract(srow, q, cap, min_finite, sbuf, tbuf, u_out[i], t_out[i])
            counts[i] = cnt
            gq_out[i] = gq
            nf_out[i] = nf
            status[i] = st


def batch_exceedance_scan(ref, refT, queries, q, cap, min_finite, n_stripes):
    """Per-query threshold exceedances of g against the reference set.

    Returns (u, times, counts, g_q, n_finite, status); rows of u/times are
    valid up to counts. Results are identical for any stripe count and match
    ``g_series`` + the quantile/extraction logic of the single-query path bit
    for bit.
    """
    nq = queries.shape[0]
    u_out = np.zeros((nq, cap))
    t_out = np.zeros((nq, cap), np.int64)
    counts = np.zeros(nq, np.int64)
    gq_out = np.full(nq, np.nan)
    nf_out = np.zeros(nq, np.int64)
    status = np.zeros(nq, np.int64)
    if ref.shape[1] == 3:
        _scan_state3(ref, queries, q, cap, min_finite, n_stripes, u_out, t_out, counts, gq_out, nf_out, status)
    else:
        _scan_generic(refT, queries, q, cap, min_finite, n_stripes, u_out, t_out, counts, gq_out, nf_out, status)
    return u_out, t_out, counts, gq_out, nf_out, status


