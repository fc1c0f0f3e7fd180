"""Trajectory datasets: container type, file I/O, normalization, splitting.

A trajectory is stored time-major: one row per snapshot, columns are the
flattened state variables. Two on-disk formats are supported:

* ``binary`` -- "DYTR v1": magic ``DYTR``, u32 version, u64 n_t, u64 n_s,
  f64 dt, u64 start_index, then n_t*n_s little-endian f64 row-major.
  Round-trips are bit-exact, subnormals included.
* ``csv`` -- header line ``# dynerr-csv v1 nt=<n_t> ns=<n_s> dt=<dt>``
  followed by comma-separated rows rendered with 17 significant digits
  (lossless for doubles). The CSV format does not carry ``start_index``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TrajectoryDataset",
    "NormStats",
    "SplitSpec",
    "DatasetFormatError",
    "load_dataset",
    "save_dataset",
    "compute_norm_stats",
    "zscore",
    "inverse_zscore",
    "split",
]

_BINARY_MAGIC = b"DYTR"
_BINARY_VERSION = 1
_CSV_HEADER_PREFIX = "# dynerr-csv v1"


class DatasetFormatError(ValueError):
    """A dataset file is malformed; the message names the offending location."""


def _as_state_matrix(states) -> np.ndarray:
    arr = np.ascontiguousarray(states, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"states must be a 2-D matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class TrajectoryDataset:
    """Time-major matrix of system states with time-step metadata.

    Row ``i`` corresponds to time ``(start_index + i) * dt``. Instances are
    immutable; the state matrix is marked read-only so it can be shared
    across threads.
    """

    name: str
    dt: float
    states: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        arr = _as_state_matrix(self.states)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"dataset needs at least one row and one column, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(f"non-finite entry at row {bad[0]}, column {bad[1]}")
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.start_index < 0:
            raise ValueError(f"start_index must be >= 0, got {self.start_index}")
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)

    @property
    def n_times(self) -> int:
        return self.states.shape[0]

    @property
    def n_states(self) -> int:
        return self.states.shape[1]

    def times(self) -> np.ndarray:
        """Absolute times of the rows, in model time units."""
        return (self.start_index + np.arange(self.n_times)) * self.dt

    def __eq__(self, other) -> bool:
        # name is a label, not part of the data identity
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.start_index == other.start_index
            and self.states.shape == other.states.shape
            and bool(np.array_equal(self.states, other.states))
        )

    def with_states(self, states: np.ndarray, name: str | None = None) -> "TrajectoryDataset":
        return TrajectoryDataset(name if name is not None else self.name, self.dt, states, self.start_index)


@dataclass(frozen=True)
class NormStats:
    """Scalar mean/std pair computed over all entries of a training matrix."""

    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)):
            raise ValueError("normalization stats must be finite")
        if not (self.std > 0):
            raise ValueError(f"std must be positive, got {self.std}")


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/validation/test fractions; must sum to one."""

    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15

    def __post_init__(self):
        for label, frac in (("train", self.train_frac), ("val", self.val_frac), ("test", self.test_frac)):
            if not (0.0 < frac < 1.0):
                raise ValueError(f"{label} fraction must lie in (0, 1), got {frac}")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"fractions must sum to 1 within 1e-12, got {total!r}")


def save_dataset(dataset: TrajectoryDataset, path, format: str = "binary") -> None:
    """Write a dataset to ``path`` in the chosen format.

    Binary round-trips are bit-exact; CSV preserves values via 17-digit
    rendering but drops ``start_index``.
    """
    # re-validate so datasets constructed through object.__setattr__ tricks fail here too
    dataset.__post_init__()
    path = Path(path)
    if format == "binary":
        header = _BINARY_MAGIC + struct.pack(
            "<IQQdQ",
            _BINARY_VERSION,
            dataset.n_times,
            dataset.n_states,
            dataset.dt,
            dataset.start_index,
        )
        body = np.ascontiguousarray(dataset.states, dtype="<f8").tobytes()
        path.write_bytes(header + body)
    elif format == "csv":
        lines = [f"{_CSV_HEADER_PREFIX} nt={dataset.n_times} ns={dataset.n_states} dt={dataset.dt!r}"]
        for row in dataset.states:
            lines.append(",".join(f"{v:.17g}" for v in row))
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}, expected 'csv' or 'binary'")


def load_dataset(path, format: str = "binary") -> TrajectoryDataset:
    """Read a dataset written by :func:`save_dataset`.

    Raises :class:`DatasetFormatError` naming the row/column of the first
    malformed or non-finite cell.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown format {format!r}, expected 'csv' or 'binary'")


def _load_binary(path: Path) -> TrajectoryDataset:
    raw = path.read_bytes()
    head_len = 4 + struct.calcsize("<IQQdQ")
    if len(raw) < head_len:
        raise DatasetFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != _BINARY_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4]!r}, expected {_BINARY_MAGIC!r}")
    version, n_t, n_s, dt, start_index = struct.unpack("<IQQdQ", raw[4:head_len])
    if version != _BINARY_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    expected = head_len + n_t * n_s * 8
    if len(raw) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes for {n_t}x{n_s} doubles, found {len(raw)}")
    states = np.frombuffer(raw[head_len:], dtype="<f8").reshape(n_t, n_s)
    bad = np.argwhere(~np.isfinite(states))
    if bad.size:
        r, c = bad[0]
        raise DatasetFormatError(f"{path}: non-finite value at row {r}, column {c}")
    return TrajectoryDataset(path.stem, dt, states.astype(np.float64), start_index)


def _load_csv(path: Path) -> TrajectoryDataset:
    with path.open() as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(_CSV_HEADER_PREFIX):
            raise DatasetFormatError(f"{path}: missing '{_CSV_HEADER_PREFIX}' header, got {header[:40]!r}")
        fields = {}
        for token in header[len(_CSV_HEADER_PREFIX):].split():
            if "=" not in token:
                raise DatasetFormatError(f"{path}: malformed header token {token!r}")
            key, value = token.split("=", 1)
            fields[key] = value
        try:
            n_t = int(fields["nt"])
            n_s = int(fields["ns"])
            dt = float(fields["dt"])
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: header must carry nt/ns/dt, got {fields}") from exc
        states = np.empty((n_t, n_s), dtype=np.float64)
        for i in range(n_t):
            line = fh.readline()
            if not line:
                raise DatasetFormatError(f"{path}: expected {n_t} data rows, file ends at row {i}")
            cells = line.rstrip("\n").split(",")
            if len(cells) != n_s:
                raise DatasetFormatError(f"{path}: row {i} has {len(cells)} cells, expected {n_s}")
            for j, cell in enumerate(cells):
                try:
                    value = float(cell)
                except ValueError as exc:
                    raise DatasetFormatError(f"{path}: unparsable value {cell!r} at row {i}, column {j}") from exc
                if not np.isfinite(value):
                    raise DatasetFormatError(f"{path}: non-finite value at row {i}, column {j}")
                states[i, j] = value
        if fh.readline().strip():
            raise DatasetFormatError(f"{path}: trailing data beyond declared {n_t} rows")
    return TrajectoryDataset(path.stem, dt, states)


def compute_norm_stats(train: TrajectoryDataset) -> NormStats:
    """Mean and population standard deviation over all entries of ``train``."""
    flat = train.states.ravel()
    mean = float(flat.mean())
    std = float(flat.std())
    if std == 0.0:
        raise ValueError("training data is constant (std = 0); cannot normalize")
    return NormStats(mean=mean, std=std)


def zscore(dataset: TrajectoryDataset, stats: NormStats) -> TrajectoryDataset:
    """Apply ``(x - mean) / std`` elementwise; shape, dt and indexing unchanged."""
    return dataset.with_states((dataset.states - stats.mean) / stats.std)


def inverse_zscore(dataset: TrajectoryDataset, stats: NormStats) -> TrajectoryDataset:
    """Undo :func:`zscore`; recovers the input within 1e-12 elementwise."""
    return dataset.with_states(dataset.states * stats.std + stats.mean)


def split(dataset: TrajectoryDataset, spec: SplitSpec = SplitSpec()) -> tuple[TrajectoryDataset, TrajectoryDataset, TrajectoryDataset]:
    """Contiguous, order-preserving train/val/test partition.

    Train and validation sizes are floored; leftover rows go to the test
    split. ``start_index`` is advanced so absolute times are preserved.
    """
    n = dataset.n_times
    if n < 3:
        raise ValueError(f"need at least 3 rows to split, got {n}")
    n_train = int(np.floor(spec.train_frac * n))
    n_val = int(np.floor(spec.val_frac * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} rows with {spec} leaves an empty part")
    parts = []
    offset = 0
    for label, size in (("train", n_train), ("val", n_val), ("test", n_test)):
        parts.append(
            TrajectoryDataset(
                f"{dataset.name}-{label}",
                dataset.dt,
                dataset.states[offset : offset + size],
                dataset.start_index + offset,
            )
        )
        offset += size
    return tuple(parts)
