"""Euclidean k-nearest-neighbour graphs.

Exact brute force below ``EXACT_MAX`` points; above that a nearest-neighbour
descent refinement of a random graph, which empirically reaches recall well
over 0.95 against exhaustive search.  All randomness is derived from a
counter-based hash so results are reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import EmbeddingMatrix, FeatureMatrix
from .errors import PreconditionError

EXACT_MAX = 4096


@dataclass(frozen=True)
class KnnGraph:
    """Per node: k neighbour indices (no self) and ascending distances."""

    indices: np.ndarray  # (n, k) int64
    dists: np.ndarray  # (n, k) float64

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        dst = np.ascontiguousarray(self.dists, dtype=np.float64)
        if idx.shape != dst.shape or idx.ndim != 2:
            raise PreconditionError("indices and dists must share a 2-d shape")
        if np.any(idx == np.arange(idx.shape[0])[:, None]):
            raise PreconditionError("knn graph contains a self edge")
        if np.any(dst < 0) or np.any(np.diff(dst, axis=1) < 0):
            raise PreconditionError("distances must be non-negative and ascending")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "dists", dst)

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def _as_points(x) -> np.ndarray:
    if isinstance(x, (FeatureMatrix, EmbeddingMatrix)):
        x = x.values
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise PreconditionError("points must form a 2-d array")
    return x


def exact_knn(x, k: int) -> KnnGraph:
    """Exhaustive chunked scan; reference answer for any input size."""
    x = _as_points(x)
    n = x.shape[0]
    sq = (x * x).sum(axis=1)
    indices = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k))
    chunk = max(1, (1 << 22) // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        rows = np.arange(stop - start)[:, None]
        vals = d2[rows, part]
        order = np.argsort(vals, axis=1, kind="stable")
        indices[start:stop] = part[rows, order]
        dists[start:stop] = np.sqrt(vals[rows, order])
    return KnnGraph(indices, dists)


@njit(cache=True, inline="always")
def _mix(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True, inline="always")
def _hash3(seed, a, b, c):
    h = seed ^ (a * np.uint64(0x9E3779B97F4A7C15))
    h = _mix(h) ^ (b * np.uint64(0xC2B2AE3D27D4EB4F))
    h = _mix(h) ^ (c * np.uint64(0x165667B19E3779F9))
    return _mix(h)


@njit(cache=True, inline="always")
def _sqdist(data, i, j):
    acc = 0.0
    for d in range(data.shape[1]):
        diff = data[i, d] - data[j, d]
        acc += diff * diff
    return acc


@njit(cache=True)
def _heap_push(idx, dst, flg, row, d, index, is_new):
    """Push into a per-row max-heap keyed on distance; reject duplicates."""
    if d >= dst[row, 0]:
        return 0
    k = idx.shape[1]
    for i in range(k):
        if idx[row, i] == index:
            return 0
    dst[row, 0] = d
    idx[row, 0] = index
    flg[row, 0] = is_new
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        largest = i
        if left < k and dst[row, left] > dst[row, largest]:
            largest = left
        if right < k and dst[row, right] > dst[row, largest]:
            largest = right
        if largest == i:
            break
        dst[row, i], dst[row, largest] = dst[row, largest], dst[row, i]
        idx[row, i], idx[row, largest] = idx[row, largest], idx[row, i]
        flg[row, i], flg[row, largest] = flg[row, largest], flg[row, i]
        i = largest
    return 1


@njit(cache=True, inline="always")
def _reservoir_add(cand, cnt, row, value, seed, it):
    c = cnt[row]
    mc = cand.shape[1]
    if c < mc:
        cand[row, c] = value
    else:
        r = _hash3(seed, np.uint64(row), np.uint64(c), np.uint64(it)) % np.uint64(c + 1)
        if r < np.uint64(mc):
            cand[row, np.int64(r)] = value
    cnt[row] = c + 1


@njit(cache=True)
def _nn_descent_impl(data, k, seed, max_candidates, n_iters, delta):
    n = data.shape[0]
    idx = np.full((n, k), -1, dtype=np.int64)
    dst = np.full((n, k), np.inf)
    flg = np.zeros((n, k), dtype=np.bool_)

    for i in range(n):
        filled = 0
        attempt = np.uint64(0)
        while filled < k and attempt < np.uint64(50 * k):
            j = np.int64(_hash3(seed, np.uint64(i), attempt, np.uint64(0)) % np.uint64(n))
            attempt += np.uint64(1)
            if j == i:
                continue
            filled += _heap_push(idx, dst, flg, i, _sqdist(data, i, j), j, True)

    for it in range(n_iters):
        new_c = np.full((n, max_candidates), -1, dtype=np.int64)
        old_c = np.full((n, max_candidates), -1, dtype=np.int64)
        new_cnt = np.zeros(n, dtype=np.int64)
        old_cnt = np.zeros(n, dtype=np.int64)
        for i in range(n):
            for j in range(k):
                v = idx[i, j]
                if v < 0:
                    continue
                if flg[i, j]:
                    _reservoir_add(new_c, new_cnt, i, v, seed ^ np.uint64(0xA5A5), it)
                    _reservoir_add(new_c, new_cnt, v, i, seed ^ np.uint64(0xA5A5), it)
                else:
                    _reservoir_add(old_c, old_cnt, i, v, seed ^ np.uint64(0x5A5A), it)
                    _reservoir_add(old_c, old_cnt, v, i, seed ^ np.uint64(0x5A5A), it)
        for i in range(n):
            for j in range(k):
                flg[i, j] = False
        updates = 0
        for i in range(n):
            for a in range(max_candidates):
                u = new_c[i, a]
                if u < 0:
                    continue
                for b in range(a + 1, max_candidates):
                    v = new_c[i, b]
                    if v < 0 or v == u:
                        continue
                    d = _sqdist(data, u, v)
                    updates += _heap_push(idx, dst, flg, u, d, v, True)
                    updates += _heap_push(idx, dst, flg, v, d, u, True)
                for b in range(max_candidates):
                    v = old_c[i, b]
                    if v < 0 or v == u:
                        continue
                    d = _sqdist(data, u, v)
                    updates += _heap_push(idx, dst, flg, u, d, v, True)
                    updates += _heap_push(idx, dst, flg, v, d, u, True)
        if updates <= delta * n * k:
            break

    for i in range(n):
        order = np.argsort(dst[i])
        idx[i] = idx[i][order]
        dst[i] = dst[i][order]
    return idx, np.sqrt(dst)


def nn_descent(x, k: int, seed: int = 0, n_iters: int | None = None,
               max_candidates: int | None = None) -> KnnGraph:
    """Approximate kNN via neighbour-of-neighbour refinement."""
    x = _as_points(x)
    n = x.shape[0]
    if not 1 <= k < n:
        raise PreconditionError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if n_iters is None:
        n_iters = max(5, int(round(np.log2(n))))
    if max_candidates is None:
        max_candidates = min(60, k)
    idx, dst = _nn_descent_impl(
        x, k, np.uint64(seed), max_candidates, n_iters, 0.001
    )
    missing = np.flatnonzero((idx < 0).any(axis=1))
    if missing.size:  # extremely rare; patch with an exact scan per node
        sq = (x * x).sum(axis=1)
        for i in missing:
            d2 = sq + sq[i] - 2.0 * (x @ x[i])
            d2[i] = np.inf
            np.maximum(d2, 0.0, out=d2)
            part = np.argpartition(d2, k - 1)[:k]
            order = np.argsort(d2[part], kind="stable")
            idx[i] = part[order]
            dst[i] = np.sqrt(d2[part[order]])
    return KnnGraph(idx, dst)


def build_knn(features, k: int, seed: int = 0) -> KnnGraph:
    """Exact graph for small inputs, NN-descent beyond ``EXACT_MAX`` points."""
    x = _as_points(features)
    n = x.shape[0]
    if not 1 <= k < n:
        raise PreconditionError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if n <= EXACT_MAX:
        return exact_knn(x, k)
    return nn_descent(x, k, seed=seed)
