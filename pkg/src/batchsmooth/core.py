"""Shared data types, validation, CSV ingestion and the BALA1 binary format."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    DimensionMismatchError,
    EmptyLabelError,
    HyperParamError,
    NonFiniteError,
    ValidationError,
)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProfileMatrix:
    """An ``n x d`` matrix of finite feature profiles, one row per sample."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"profiles must be a non-empty 2-D matrix, got shape {data.shape}")
        bad = ~np.isfinite(data)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise NonFiniteError(int(row), int(col))
        object.__setattr__(self, "data", _frozen(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class _DenseLabels:
    """Label vector with dense 1-based ids and the original names they came from."""

    labels: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise ValidationError("labels must be a non-empty 1-D vector")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("label ids must be integers; use from_values() for arbitrary labels")
        count = int(labels.max())
        if labels.min() < 1:
            raise ValidationError("label ids must be >= 1")
        present = np.bincount(labels, minlength=count + 1)[1:]
        if (present == 0).any():
            missing = int(np.flatnonzero(present == 0)[0]) + 1
            raise EmptyLabelError(f"label id {missing} does not occur (ids must cover 1..{count})")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i) for i in range(1, count + 1)))

    @classmethod
    def from_values(cls, values: Iterable):
        """Map arbitrary hashable values to ids 1..C in order of first appearance."""
        mapping: dict = {}
        ids = []
        for v in values:
            if v not in mapping:
                mapping[v] = len(mapping) + 1
            ids.append(mapping[v])
        return cls(np.asarray(ids, dtype=np.int64), tuple(mapping))

    @property
    def count(self) -> int:
        return len(self.names)

    @property
    def codes(self) -> np.ndarray:
        """0-based ids."""
        return self.labels - 1

    def __len__(self):
        return self.labels.size


class BatchLabels(_DenseLabels):
    @property
    def B(self) -> int:
        return self.count


class ClusterLabels(_DenseLabels):
    @property
    def K(self) -> int:
        return self.count


@dataclass(frozen=True)
class HyperParams:
    """Correction hyperparameters.

    ``delta_against`` selects the coverage vector used to count newly covered
    columns for the stopping rule: ``"cumulative"`` (first-time coverage over
    the whole run) or ``"block"`` (coverage since the last block reset).
    """

    k: int = 5
    tau: int = 50
    block_len: int = 50
    pca_dims: int | None = None
    seed: int = 0
    delta_against: str = "cumulative"

    def __post_init__(self):
        for name in ("k", "tau", "block_len"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise HyperParamError(f"{name} must be a positive integer, got {value!r}")
        if self.pca_dims is not None and (
            not isinstance(self.pca_dims, (int, np.integer)) or self.pca_dims < 1
        ):
            raise HyperParamError(f"pca_dims must be a positive integer, got {self.pca_dims!r}")
        if self.delta_against not in ("cumulative", "block"):
            raise HyperParamError(f"delta_against must be 'cumulative' or 'block', got {self.delta_against!r}")

    def check_against(self, d: int) -> None:
        if self.pca_dims is not None and self.pca_dims > d:
            raise HyperParamError(f"pca_dims={self.pca_dims} exceeds feature count d={d}")


@dataclass(frozen=True)
class Inputs:
    profiles: ProfileMatrix
    batches: BatchLabels
    params: HyperParams


def validate_inputs(profiles, batches, params: HyperParams | None = None) -> Inputs:
    """Coerce and check the correction inputs, raising on the first violation."""
    if not isinstance(profiles, ProfileMatrix):
        profiles = ProfileMatrix(profiles)
    if not isinstance(batches, BatchLabels):
        values = np.asarray(batches)
        if np.issubdtype(values.dtype, np.integer) and values.size and values.min() >= 1:
            batches = BatchLabels(values)
        else:
            batches = BatchLabels.from_values(values.tolist())
    if len(batches) != profiles.n:
        raise DimensionMismatchError(
            f"batch label count {len(batches)} does not match profile rows {profiles.n}"
        )
    params = params or HyperParams()
    params.check_against(profiles.d)
    return Inputs(profiles, batches, params)


# ---------------------------------------------------------------------------
# Sparse affinity rows
# ---------------------------------------------------------------------------

MAGIC = b"BALA1\x00\x00\x00"


def canonical_row(cols, vals) -> tuple[np.ndarray, np.ndarray]:
    """Sort by column, drop exact zeros. Idempotent."""
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    keep = vals != 0.0
    cols, vals = cols[keep], vals[keep]
    order = np.argsort(cols, kind="stable")
    return cols[order], vals[order]


@dataclass(frozen=True, eq=False)
class SparseAffinityRows:
    """Sampled rows of an ``n x n`` affinity matrix in row-compressed form.

    Row ``a`` holds the affinities of anchor ``row_indices[a]`` and occupies
    ``indices[indptr[a]:indptr[a+1]]`` / ``data[...]``. ``bounded=False``
    lifts the ``<= 1`` cap for raw block-model rows.
    """

    row_indices: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int
    bounded: bool = True

    def __post_init__(self):
        rows = np.asarray(self.row_indices, dtype=np.int64)
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        data = np.asarray(self.data, dtype=np.float64)
        m = rows.size
        if indptr.shape != (m + 1,) or indptr[0] != 0 or indptr[-1] != indices.size:
            raise ValidationError("malformed indptr")
        if indices.size != data.size or (np.diff(indptr) < 0).any():
            raise ValidationError("malformed row storage")
        if m and (rows.min() < 0 or rows.max() >= self.n):
            raise ValidationError("row index out of range")
        if np.unique(rows).size != m:
            raise ValidationError("row indices must be distinct")
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            raise ValidationError("column index out of range")
        if not (data > 0).all():
            raise ValidationError("stored affinities must be strictly positive")
        if self.bounded and (data > 1.0).any():
            raise ValidationError("stored affinities must be <= 1")
        steps = np.diff(indices)
        row_starts = indptr[1:-1]
        inner = np.ones(steps.size, dtype=bool)
        inner[row_starts[(row_starts > 0) & (row_starts < indices.size)] - 1] = False
        if (steps[inner] <= 0).any():
            raise ValidationError("column indices within a row must be strictly increasing")
        for name, arr in (("row_indices", rows), ("indptr", indptr), ("indices", indices), ("data", data)):
            object.__setattr__(self, name, _frozen(arr))
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_rows(cls, row_indices: Sequence[int], rows: Sequence[tuple], n: int, bounded: bool = True):
        canon = [canonical_row(c, v) for c, v in rows]
        indptr = np.zeros(len(canon) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([c.size for c, _ in canon])
        indices = np.concatenate([c for c, _ in canon]) if canon else np.zeros(0, np.int64)
        data = np.concatenate([v for _, v in canon]) if canon else np.zeros(0)
        return cls(np.asarray(row_indices, dtype=np.int64), indptr, indices, data, n, bounded)

    @property
    def m(self) -> int:
        return self.row_indices.size

    def row(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[a], self.indptr[a + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.data.copy(), self.indices.copy(), self.indptr.copy()), shape=(self.m, self.n)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def canonicalize(self) -> "SparseAffinityRows":
        return SparseAffinityRows.from_rows(
            self.row_indices, [self.row(a) for a in range(self.m)], self.n, self.bounded
        )

    def __eq__(self, other):
        if not isinstance(other, SparseAffinityRows):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.row_indices, other.row_indices)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and self.data.tobytes() == other.data.tobytes()
        )

    # BALA1 layout (all little-endian): 8-byte magic "BALA1\0\0\0", then
    # uint64 m, uint64 n, uint64 nnz, int64[m] row_indices, int64[m+1] indptr,
    # int64[nnz] column indices, float64[nnz] values.
    def to_bytes(self) -> bytes:
        return encode_bala1(self.row_indices, self.indptr, self.indices, self.data, self.n)

    @classmethod
    def from_bytes(cls, payload: bytes, bounded: bool = True) -> "SparseAffinityRows":
        rows, indptr, indices, data, n = decode_bala1(payload)
        return cls(rows, indptr, indices, data, n, bounded)


def encode_bala1(row_indices, indptr, indices, data, n) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<QQQ", len(row_indices), n, len(indices)))
    buf.write(np.asarray(row_indices, dtype="<i8").tobytes())
    buf.write(np.asarray(indptr, dtype="<i8").tobytes())
    buf.write(np.asarray(indices, dtype="<i8").tobytes())
    buf.write(np.asarray(data, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_bala1(payload: bytes):
    if payload[:8] != MAGIC:
        raise ValidationError("not a BALA1 payload (bad magic)")
    m, n, nnz = struct.unpack_from("<QQQ", payload, 8)
    expected = 32 + 8 * (m + (m + 1) + nnz + nnz)
    if len(payload) != expected:
        raise ValidationError(f"BALA1 payload length {len(payload)} != expected {expected}")
    off = 32
    rows = np.frombuffer(payload, "<i8", m, off).astype(np.int64)
    off += 8 * m
    indptr = np.frombuffer(payload, "<i8", m + 1, off).astype(np.int64)
    off += 8 * (m + 1)
    indices = np.frombuffer(payload, "<i8", nnz, off).astype(np.int64)
    off += 8 * nnz
    data = np.frombuffer(payload, "<f8", nnz, off).astype(np.float64)
    return rows, indptr, indices, data, int(n)


def dense_to_bala1(matrix: np.ndarray) -> bytes:
    """Encode a dense square matrix with every row sampled (zeros dropped)."""
    csr = sparse.csr_matrix(np.asarray(matrix, dtype=np.float64))
    csr.eliminate_zeros()
    csr.sort_indices()
    n = csr.shape[1]
    return encode_bala1(np.arange(csr.shape[0]), csr.indptr, csr.indices, csr.data, n)


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------


@dataclass
class ProfileTable:
    """A parsed profile CSV: feature matrix plus the untouched annotation columns."""

    header: list[str]
    feature_cols: list[int]
    features: ProfileMatrix
    batches: BatchLabels | None
    labels: ClusterLabels | None
    annotations: dict[str, list[str]] = field(default_factory=dict)
    raw_rows: list[list[str]] = field(default_factory=list)

    @property
    def feature_names(self) -> list[str]:
        return [self.header[c] for c in self.feature_cols]


def read_profile_csv(
    path,
    batch_col: str | None = None,
    label_col: str | None = None,
    extra_cols: Sequence[str] = (),
) -> ProfileTable:
    """Parse a header-first CSV. Every column not named as an annotation is a float feature."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty CSV") from None
        rows = [r for r in reader if r]
    named = [c for c in (batch_col, label_col, *extra_cols) if c]
    for col in named:
        if col not in header:
            raise ValidationError(f"column {col!r} not found in CSV header")
    annot_idx = {header.index(c) for c in named}
    feature_cols = [i for i in range(len(header)) if i not in annot_idx]
    if not feature_cols:
        raise ValidationError("no feature columns left after removing annotation columns")
    values = np.empty((len(rows), len(feature_cols)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DimensionMismatchError(f"row {r} has {len(row)} fields, header has {len(header)}")
        for j, c in enumerate(feature_cols):
            try:
                values[r, j] = float(row[c])
            except ValueError:
                raise ValidationError(
                    f"row {r}, column {header[c]!r}: unparsable feature value {row[c]!r}"
                ) from None
    features = ProfileMatrix(values)
    annotations = {c: [row[header.index(c)] for row in rows] for c in named}
    batches = BatchLabels.from_values(annotations[batch_col]) if batch_col else None
    labels = ClusterLabels.from_values(annotations[label_col]) if label_col else None
    return ProfileTable(header, feature_cols, features, batches, labels, annotations, rows)


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def write_profile_csv(path, table: ProfileTable, features: np.ndarray, keep: Sequence[int] | None = None) -> None:
    """Write ``features`` back in the table's row and column order.

    ``keep`` lists retained positions within ``table.feature_cols`` when
    preprocessing dropped features; dropped columns are omitted.
    """
    keep = list(range(len(table.feature_cols))) if keep is None else list(keep)
    features = np.asarray(features)
    if features.shape != (len(table.raw_rows), len(keep)):
        raise DimensionMismatchError(
            f"corrected matrix shape {features.shape} does not match table "
            f"({len(table.raw_rows)}, {len(keep)})"
        )
    pos = {table.feature_cols[j]: t for t, j in enumerate(keep)}
    dropped = set(table.feature_cols) - set(pos)
    cols = [c for c in range(len(table.header)) if c not in dropped]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([table.header[c] for c in cols])
        for r, raw in enumerate(table.raw_rows):
            writer.writerow(
                [format_float(features[r, pos[c]]) if c in pos else raw[c] for c in cols]
            )


def write_matrix_csv(path, matrix: np.ndarray, header: Sequence[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for row in np.asarray(matrix):
            writer.writerow([format_float(v) for v in row])


def write_bytes(path, payload: bytes) -> None:
    Path(path).write_bytes(payload)
