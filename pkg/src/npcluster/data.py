"""Feature/label/embedding containers and their on-disk formats.

Two binary containers are defined, both little-endian:

* ``FMAT``  -- deep feature matrices, float32 payload.
  Layout: magic ``FEATMAT1`` (8 bytes), u32 version=1, u64 n, u32 d,
  u8 has_labels, n*d float32 row-major, then (if has_labels) n u32 labels.
* ``EMAT``  -- embedding matrices, float64 payload (the variational stage
  needs the extra precision).  Layout mirrors FMAT with magic ``EMBMAT01``.

CSV holds one sample per row as decimal floats with an optional final
integer label column.  Label-only files are plain text, one non-negative
integer per line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, PreconditionError

FMAT_MAGIC = b"FEATMAT1"
EMAT_MAGIC = b"EMBMAT01"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sIQIB")  # magic, version, n, d, has_labels


def _freeze(arr):
    arr.flags.writeable = False
    return arr


def _validate_values(values, what):
    if values.ndim != 2:
        raise PreconditionError(f"{what} values must be 2-dimensional")
    n, d = values.shape
    if n < 1 or d < 1:
        raise PreconditionError(f"{what} requires n >= 1 and d >= 1, got {n}x{d}")
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise PreconditionError(f"non-finite value in {what} at row {i}, column {j}")


@dataclass(frozen=True)
class FeatureMatrix:
    """n x d matrix of raw deep features, stored as float32."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        _validate_values(values, "feature matrix")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x p matrix of low-dimensional coordinates, stored as float64."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        _validate_values(values, "embedding matrix")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Vector of n non-negative integer labels; ids need not be contiguous."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size < 1:
            raise PreconditionError("label vector must be 1-dimensional and non-empty")
        if np.any(labels < 0):
            i = int(np.argmax(labels < 0))
            raise PreconditionError(f"negative label at position {i}")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n(self) -> int:
        return self.labels.shape[0]


def relabel_contiguous(labels) -> tuple[LabelVector, int]:
    """Map labels onto {0..K-1} in first-occurrence order.

    Returns the relabeled vector and the number of distinct labels.
    Equality structure is preserved: two positions share a label before
    iff they share one after.
    """
    if not isinstance(labels, LabelVector):
        labels = LabelVector(np.asarray(labels))
    arr = labels.labels
    _, first_idx, inverse = np.unique(arr, return_index=True, return_inverse=True)
    # np.unique sorts by value; remap so ids follow first occurrence instead
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    out = rank[inverse]
    return LabelVector(out), int(order.size)


def _check_labels_match(matrix_n: int, labels: LabelVector | None):
    if labels is not None and labels.n != matrix_n:
        raise PreconditionError(
            f"label count {labels.n} does not match matrix rows {matrix_n}"
        )


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------


def _read_binary(path, magic, dtype, what):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"{path}: truncated header, need {_HEADER.size} bytes, got {len(raw)}"
        )
    got_magic, version, n, d, has_labels = _HEADER.unpack_from(raw, 0)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r} at byte 0, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 8")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: invalid dimensions n={n}, d={d} in header")
    if has_labels not in (0, 1):
        raise FormatError(f"{path}: invalid has_labels byte {has_labels} at byte 24")
    itemsize = np.dtype(dtype).itemsize
    payload = n * d * itemsize
    need = _HEADER.size + payload + (4 * n if has_labels else 0)
    if len(raw) != need:
        raise FormatError(
            f"{path}: truncated or oversized file, expected {need} bytes, got {len(raw)}"
        )
    values = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<"),
                           count=n * d, offset=_HEADER.size)
    values = values.astype(dtype).reshape(n, d)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        offset = _HEADER.size + (i * d + j) * itemsize
        raise FormatError(f"{path}: non-finite value at byte {offset} (row {i}, column {j})")
    labels = None
    if has_labels:
        lab = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size + payload)
        labels = LabelVector(lab.astype(np.int64))
    return values, labels


def _write_binary(path, magic, values, labels):
    n, d = values.shape
    parts = [_HEADER.pack(magic, FORMAT_VERSION, n, d, 1 if labels is not None else 0)]
    parts.append(np.ascontiguousarray(values).astype(values.dtype.newbyteorder("<")).tobytes())
    if labels is not None:
        lab = labels.labels
        if np.any(lab > 0xFFFFFFFF):
            raise PreconditionError("labels exceed u32 range of the binary format")
        parts.append(lab.astype("<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


# ---------------------------------------------------------------------------
# csv
# ---------------------------------------------------------------------------


def _read_csv(path, dtype, label_column):
    rows = []
    labels = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if label_column:
                if len(cells) < 2:
                    raise FormatError(f"{path}:{lineno}: need at least 2 columns with label flag")
                *value_cells, label_cell = cells
                try:
                    labels.append(int(label_cell))
                except ValueError:
                    raise FormatError(
                        f"{path}:{lineno}: label column is not an integer: {label_cell!r}"
                    ) from None
            else:
                value_cells = cells
            try:
                row = [float(c) for c in value_cells]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell") from None
            if rows and len(row) != len(rows[0]):
                raise FormatError(
                    f"{path}:{lineno}: {len(row)} columns, expected {len(rows[0])}"
                )
            if not all(np.isfinite(row)):
                raise FormatError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=dtype)
    lab = LabelVector(np.asarray(labels, dtype=np.int64)) if label_column else None
    return values, lab


def _write_csv(path, values, labels, fmt):
    with open(path, "w", encoding="ascii") as fh:
        for i, row in enumerate(values):
            cells = [fmt % v for v in row]
            if labels is not None:
                cells.append(str(int(labels.labels[i])))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def read_features(path, format="binary", label_column=False):
    """Read a feature file; returns (FeatureMatrix, LabelVector or None).

    ``label_column`` selects the trailing integer column for csv input;
    binary files are self-describing.
    """
    if format == "binary":
        values, labels = _read_binary(path, FMAT_MAGIC, np.float32, "features")
    elif format == "csv":
        values, labels = _read_csv(path, np.float32, label_column)
    else:
        raise FormatError(f"unknown feature format {format!r}")
    matrix = FeatureMatrix(values)
    _check_labels_match(matrix.n, labels)
    return matrix, labels


def write_features(matrix: FeatureMatrix, labels, path, format="binary"):
    """Write features (+ optional labels). Binary round-trips bit-exactly."""
    _check_labels_match(matrix.n, labels)
    if format == "binary":
        _write_binary(path, FMAT_MAGIC, matrix.values, labels)
    elif format == "csv":
        # 9 significant digits round-trip any float32 exactly
        _write_csv(path, matrix.values, labels, "%.9g")
    else:
        raise FormatError(f"unknown feature format {format!r}")


def read_embedding(path, format="binary", label_column=False):
    """Read an embedding file; returns (EmbeddingMatrix, LabelVector or None)."""
    if format == "binary":
        values, labels = _read_binary(path, EMAT_MAGIC, np.float64, "embedding")
    elif format == "csv":
        values, labels = _read_csv(path, np.float64, label_column)
    else:
        raise FormatError(f"unknown embedding format {format!r}")
    matrix = EmbeddingMatrix(values)
    _check_labels_match(matrix.n, labels)
    return matrix, labels


def write_embedding(matrix: EmbeddingMatrix, labels, path, format="binary"):
    _check_labels_match(matrix.n, labels)
    if format == "binary":
        _write_binary(path, EMAT_MAGIC, matrix.values, labels)
    elif format == "csv":
        _write_csv(path, matrix.values, labels, "%.17g")
    else:
        raise FormatError(f"unknown embedding format {format!r}")


def read_labels(path) -> LabelVector:
    """Read a text label file: one non-negative integer per line."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not an integer: {line!r}") from None
    if not out:
        raise FormatError(f"{path}: no labels")
    return LabelVector(np.asarray(out, dtype=np.int64))


def write_labels(labels: LabelVector, path):
    with open(path, "w", encoding="ascii") as fh:
        for v in labels.labels:
            fh.write(f"{int(v)}\n")
