"""Lloyd's K-Means with k-means++ seeding.

Serves both as the comparison baseline with a known cluster count and as
the initializer for the variational mixture.  Deterministic given a seed:
independent restarts use seed, seed+1, ... and the best-inertia run wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingMatrix, LabelVector
from .errors import PreconditionError


@dataclass(frozen=True)
class KmeansResult:
    labels: LabelVector
    centers: np.ndarray  # (k, p)
    inertia: float
    n_iter: int
    seeding: str = "k-means++"


def _as_points(y) -> np.ndarray:
    if isinstance(y, EmbeddingMatrix):
        return y.values
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise PreconditionError("points must form a 2-d array")
    return y


def _plusplus_seed(y, k, rng):
    n = y.shape[0]
    centers = np.empty((k, y.shape[1]))
    centers[0] = y[rng.integers(n)]
    d2 = ((y - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = rng.choice(n, p=probs)
        else:
            idx = rng.integers(n)  # all remaining points coincide with centers
        centers[j] = y[idx]
        d2 = np.minimum(d2, ((y - centers[j]) ** 2).sum(axis=1))
    return centers


def _assign(y, centers):
    # squared distances via the expansion trick; argmin breaks ties low
    d2 = (
        (y**2).sum(axis=1)[:, None]
        - 2.0 * y @ centers.T
        + (centers**2).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)
    return labels, d2


def _repair_empty(y, centers, labels, d2):
    """Give each empty cluster the point currently farthest from its center."""
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        point_d2 = d2[np.arange(y.shape[0]), labels]
        # only steal from clusters that keep at least one point
        stealable = counts[labels] > 1
        if not stealable.any():
            continue
        candidates = np.where(stealable, point_d2, -np.inf)
        victim = int(np.argmax(candidates))
        counts[labels[victim]] -= 1
        labels[victim] = empty
        counts[empty] += 1
        centers[empty] = y[victim]
    return centers, labels


def _lloyd(y, k, max_iter, rng):
    centers = _plusplus_seed(y, k, rng)
    labels = np.full(y.shape[0], -1, dtype=np.int64)
    n_iter = 0
    trace = []
    for n_iter in range(1, max_iter + 1):
        new_labels, d2 = _assign(y, centers)
        centers, new_labels = _repair_empty(y, centers, new_labels, d2)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = y[members].mean(axis=0)
        trace.append(float(((y - centers[labels]) ** 2).sum()))
    inertia = float(((y - centers[labels]) ** 2).sum())
    return labels, centers, inertia, n_iter, trace


def kmeans_fit(y, k: int, n_init: int = 5, max_iter: int = 300, seed: int = 0) -> KmeansResult:
    """Best-of-``n_init`` K-Means fit; restarts are seeded seed..seed+n_init-1."""
    y = _as_points(y)
    n = y.shape[0]
    if not 1 <= k <= n:
        raise PreconditionError(f"k must satisfy 1 <= k <= n, got k={k}, n={n}")
    best = None
    for i in range(n_init):
        rng = np.random.default_rng(seed + i)
        labels, centers, inertia, n_iter, _ = _lloyd(y, k, max_iter, rng)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia, n_iter)
    labels, centers, inertia, n_iter = best
    return KmeansResult(
        labels=LabelVector(labels),
        centers=centers,
        inertia=inertia,
        n_iter=n_iter,
    )
