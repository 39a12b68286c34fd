"""Stochastic gradient descent for the low-dimensional layout.

Edges fire on an epochs-per-sample schedule so each is visited with
frequency proportional to its weight.  An attractive move follows the
gradient of the log output kernel; each visit also draws repulsive moves
against uniformly sampled non-neighbours.  Per-coordinate gradients are
clipped to [-4, 4] and the learning rate decays linearly to zero.

Negative draws come from a counter-based hash of (seed, edge, epoch,
draw), so the deterministic single-worker kernel is bitwise reproducible
and the parallel kernel differs only through racing position updates.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .knn import _hash3  # counter-based uint64 hash


@njit(cache=True, inline="always")
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@njit(cache=True, inline="always")
def _is_neighbor(indptr, neighbors, i, j):
    lo = indptr[i]
    hi = indptr[i + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        v = neighbors[mid]
        if v == j:
            return True
        if v < j:
            lo = mid + 1
        else:
            hi = mid
    return False


@njit(cache=True, inline="always")
def _edge_step(emb, head, tail, eps_sample, eps_neg, next_sample, next_neg,
               indptr, neighbors, a, b, lr, epoch, seed, e):
    if next_sample[e] > epoch:
        return
    n_vertices = emb.shape[0]
    dim = emb.shape[1]
    j = head[e]
    k = tail[e]

    d2 = 0.0
    for d in range(dim):
        diff = emb[j, d] - emb[k, d]
        d2 += diff * diff
    if d2 > 0.0:
        coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2**b + 1.0)
    else:
        coeff = 0.0
    for d in range(dim):
        g = _clip(coeff * (emb[j, d] - emb[k, d]))
        emb[j, d] += g * lr
        emb[k, d] -= g * lr
    next_sample[e] += eps_sample[e]

    n_neg = int((epoch - next_neg[e]) / eps_neg[e])
    for t in range(n_neg):
        c = np.int64(
            _hash3(seed, np.uint64(e), np.uint64(epoch), np.uint64(t))
            % np.uint64(n_vertices)
        )
        if c == j or _is_neighbor(indptr, neighbors, j, c):
            continue
        d2 = 0.0
        for d in range(dim):
            diff = emb[j, d] - emb[c, d]
            d2 += diff * diff
        if d2 > 0.0:
            coeff = (2.0 * b) / ((0.001 + d2) * (a * d2**b + 1.0))
            for d in range(dim):
                emb[j, d] += _clip(coeff * (emb[j, d] - emb[c, d])) * lr
        else:
            for d in range(dim):
                emb[j, d] += 4.0 * lr
    next_neg[e] += n_neg * eps_neg[e]


@njit(cache=True)
def _sgd_deterministic(emb, head, tail, eps_sample, indptr, neighbors,
                       a, b, lr0, n_epochs, neg_rate, seed):
    eps_neg = eps_sample / neg_rate
    next_sample = eps_sample.copy()
    next_neg = eps_neg.copy()
    for epoch in range(n_epochs):
        lr = lr0 * (1.0 - epoch / n_epochs)
        for e in range(head.shape[0]):
            _edge_step(emb, head, tail, eps_sample, eps_neg, next_sample,
                       next_neg, indptr, neighbors, a, b, lr, epoch, seed, e)


@njit(cache=True, parallel=True)
def _sgd_parallel(emb, head, tail, eps_sample, indptr, neighbors,
                  a, b, lr0, n_epochs, neg_rate, seed):
    eps_neg = eps_sample / neg_rate
    next_sample = eps_sample.copy()
    next_neg = eps_neg.copy()
    for epoch in range(n_epochs):
        lr = lr0 * (1.0 - epoch / n_epochs)
        for e in prange(head.shape[0]):
            _edge_step(emb, head, tail, eps_sample, eps_neg, next_sample,
                       next_neg, indptr, neighbors, a, b, lr, epoch, seed, e)


def run_sgd(emb, head, tail, eps_sample, indptr, neighbors, a, b,
            lr0, n_epochs, neg_rate, seed, deterministic=True):
    """Dispatch to the bitwise-reproducible or the racy parallel kernel."""
    kernel = _sgd_deterministic if deterministic else _sgd_parallel
    kernel(emb, head, tail, eps_sample, indptr, neighbors,
           float(a), float(b), float(lr0), int(n_epochs), float(neg_rate),
           np.uint64(seed))
    return emb
