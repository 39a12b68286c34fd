"""Clustering evaluation: accuracy under optimal matching, NMI, ARI.

All three metrics are computed from a shared contingency table with exact
integer counts.  Accuracy aligns predicted clusters with reference classes
through a minimum-cost assignment on negated co-occurrence counts; when the
cluster counts differ the assignment is rectangular and unmatched predicted
clusters contribute nothing, so accuracy stays sensitive to the inferred
number of clusters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import LabelVector, relabel_contiguous
from .errors import PreconditionError


def _as_label_array(labels):
    if isinstance(labels, LabelVector):
        return labels.labels
    return LabelVector(np.asarray(labels)).labels


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # (r, c) int64

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def col_sums(self):
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    inferred_k: int
    true_k: int
    n: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "acc": self.acc,
                "nmi": self.nmi,
                "ari": self.ari,
                "inferred_k": self.inferred_k,
                "true_k": self.true_k,
                "n": self.n,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        return cls(
            acc=d["acc"],
            nmi=d["nmi"],
            ari=d["ari"],
            inferred_k=d["inferred_k"],
            true_k=d["true_k"],
            n=d["n"],
        )


def contingency(true_labels, pred_labels) -> ContingencyTable:
    """Co-occurrence counts n_ij after contiguous relabeling of both sides."""
    t = _as_label_array(true_labels)
    p = _as_label_array(pred_labels)
    if t.shape[0] != p.shape[0]:
        raise PreconditionError(
            f"label vectors disagree in length: {t.shape[0]} vs {p.shape[0]}"
        )
    t, r = relabel_contiguous(t)
    p, c = relabel_contiguous(p)
    flat = t.labels * c + p.labels
    counts = np.bincount(flat, minlength=r * c).reshape(r, c)
    return ContingencyTable(counts.astype(np.int64))


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of a rectangular cost matrix.

    Returns min(r, c) (row, col) pairs; equivalent to zero-padding the
    matrix to square and dropping padded pairs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise PreconditionError("cost must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(cost)):
        i, j = np.argwhere(~np.isfinite(cost))[0]
        raise PreconditionError(f"non-finite cost at ({i}, {j})")
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def clustering_accuracy(true_labels, pred_labels) -> float:
    """Fraction of samples correct under the best cluster-to-class matching."""
    table = contingency(true_labels, pred_labels)
    pairs = hungarian(-table.counts.astype(np.float64))
    matched = sum(int(table.counts[i, j]) for i, j in pairs)
    return matched / table.n


def _entropy(sums, n):
    probs = sums[sums > 0] / n
    return float(-np.sum(probs * np.log(probs)))


def _same_partition(true_labels, pred_labels) -> bool:
    t, _ = relabel_contiguous(_as_label_array(true_labels))
    p, _ = relabel_contiguous(_as_label_array(pred_labels))
    return bool(np.array_equal(t.labels, p.labels))


def nmi(true_labels, pred_labels, normalization="arithmetic") -> float:
    """Mutual information normalized by the mean of the two entropies.

    Natural logarithms throughout.  Conventions: 1.0 for identical
    partitions (even single-cluster ones); 0.0 when either partition
    carries no information and they differ.
    """
    table = contingency(true_labels, pred_labels)
    if _same_partition(true_labels, pred_labels):
        return 1.0
    n = table.n
    h_t = _entropy(table.row_sums, n)
    h_p = _entropy(table.col_sums, n)
    if h_t == 0.0 or h_p == 0.0:
        return 0.0
    a = table.row_sums
    b = table.col_sums
    mi = 0.0
    for i in range(table.counts.shape[0]):
        for j in range(table.counts.shape[1]):
            nij = table.counts[i, j]
            if nij > 0:
                mi += (nij / n) * np.log(n * nij / (a[i] * b[j]))
    mi = max(float(mi), 0.0)
    if normalization == "arithmetic":
        denom = 0.5 * (h_t + h_p)
    elif normalization == "geometric":
        denom = float(np.sqrt(h_t * h_p))
    else:
        raise PreconditionError(f"unknown NMI normalization {normalization!r}")
    return mi / denom


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def ari(true_labels, pred_labels) -> float:
    """Rand index adjusted for chance; exact integer pair counting."""
    table = contingency(true_labels, pred_labels)
    n = table.n
    if n < 2:
        raise PreconditionError("ARI requires at least 2 samples")
    # 64-bit pair counts stay exact up to ~3e9 samples
    assert n <= 3_000_000_000
    sum_pairs = sum(_comb2(int(v)) for v in table.counts.ravel())
    sum_a = sum(_comb2(int(v)) for v in table.row_sums)
    sum_b = sum(_comb2(int(v)) for v in table.col_sums)
    total = _comb2(n)
    numerator = 2 * sum_pairs * total - 2 * sum_a * sum_b
    denominator = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if denominator == 0:
        return 1.0 if _same_partition(true_labels, pred_labels) else 0.0
    return numerator / denominator


def evaluate(true_labels, pred_labels) -> MetricsReport:
    """Bundle ACC/NMI/ARI plus the cluster counts of both partitions."""
    t = _as_label_array(true_labels)
    p = _as_label_array(pred_labels)
    if t.shape[0] != p.shape[0]:
        raise PreconditionError(
            f"label vectors disagree in length: {t.shape[0]} vs {p.shape[0]}"
        )
    return MetricsReport(
        acc=clustering_accuracy(t, p),
        nmi=nmi(t, p),
        ari=ari(t, p),
        inferred_k=int(np.unique(p).size),
        true_k=int(np.unique(t).size),
        n=int(t.shape[0]),
    )
