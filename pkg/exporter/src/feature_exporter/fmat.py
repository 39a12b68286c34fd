"""Writer for the FMAT binary feature container consumed by the
clustering engine.

Layout (little-endian): magic ``FEATMAT1`` (8 bytes), u32 version=1,
u64 n, u32 d, u8 has_labels, n*d float32 row-major, then (if has_labels)
n u32 labels.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FEATMAT1"
VERSION = 1
_HEADER = struct.Struct("<8sIQIB")


def write_fmat(values: np.ndarray, labels, path) -> None:
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ValueError("feature matrix must be non-empty and 2-dimensional")
    if not np.all(np.isfinite(values)):
        raise ValueError("feature matrix contains non-finite values")
    n, d = values.shape
    parts = [_HEADER.pack(MAGIC, VERSION, n, d, 1 if labels is not None else 0)]
    parts.append(values.astype("<f4").tobytes())
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},)")
        if labels.min() < 0 or labels.max() > 0xFFFFFFFF:
            raise ValueError("labels must fit in u32")
        parts.append(labels.astype("<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))
