import numpy as np
import pytest

from npcluster import PreconditionError, build_knn, exact_knn, nn_descent
from npcluster.knn import EXACT_MAX, KnnGraph


def recall_against_exact(approx: KnnGraph, x, sample=None):
    n = x.shape[0]
    rows = np.arange(n) if sample is None else sample
    hits = 0
    total = 0
    for i in rows:
        d2 = ((x - x[i]) ** 2).sum(axis=1)
        d2[i] = np.inf
        truth = set(np.argsort(d2, kind="stable")[: approx.k].tolist())
        hits += len(truth & set(approx.indices[i].tolist()))
        total += approx.k
    return hits / total


def test_three_point_line():
    x = np.array([[0.0], [1.0], [3.0]])
    graph = build_knn(x, 1)
    np.testing.assert_array_equal(graph.indices.ravel(), [1, 0, 1])
    np.testing.assert_allclose(graph.dists.ravel(), [1.0, 1.0, 2.0])


def test_no_self_edges_and_sorted():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4))
    graph = build_knn(x, 10)
    assert not np.any(graph.indices == np.arange(50)[:, None])
    assert np.all(np.diff(graph.dists, axis=1) >= 0)


def test_exact_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(80, 5))
    graph = exact_knn(x, 7)
    assert recall_against_exact(graph, x) == 1.0


def test_nn_descent_recall():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 10))
    graph = nn_descent(x, 15, seed=0)
    assert recall_against_exact(graph, x) >= 0.95


def test_nn_descent_deterministic():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(150, 6))
    g1 = nn_descent(x, 10, seed=5)
    g2 = nn_descent(x, 10, seed=5)
    np.testing.assert_array_equal(g1.indices, g2.indices)
    np.testing.assert_array_equal(g1.dists, g2.dists)


def test_build_knn_large_uses_descent_with_high_recall():
    rng = np.random.default_rng(4)
    n = EXACT_MAX + 150
    x = rng.normal(size=(n, 8))
    graph = build_knn(x, 12, seed=0)
    sample = rng.choice(n, size=60, replace=False)
    assert recall_against_exact(graph, x, sample) >= 0.95


def test_k_bounds():
    x = np.zeros((5, 2))
    with pytest.raises(PreconditionError):
        build_knn(x, 5)
    with pytest.raises(PreconditionError):
        build_knn(x, 0)


def test_graph_validation():
    with pytest.raises(PreconditionError, match="self edge"):
        KnnGraph(np.array([[0]]), np.array([[0.0]]))
    with pytest.raises(PreconditionError, match="ascending"):
        KnnGraph(np.array([[1, 2]]), np.array([[2.0, 1.0]]))
