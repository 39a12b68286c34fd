import logging

import numpy as np
import pytest
from scipy.optimize import brentq

import npcluster as npc
from npcluster import (
    CurveParams,
    UmapConfig,
    calibrate_smooth_knn,
    embed,
    fit_curve_params,
    fuzzy_simplicial_set,
    initialize_embedding,
    optimize_embedding,
)
from npcluster.knn import KnnGraph, exact_knn
from conftest import make_blobs


def test_calibration_three_neighbor_example():
    # node 0 of the line 0,1,2,3 sees neighbours at distances 1, 2, 3
    graph = exact_knn(np.array([[0.0], [1.0], [2.0], [3.0]]), 3)
    np.testing.assert_allclose(graph.dists[0], [1.0, 2.0, 3.0])
    rho, sigma = calibrate_smooth_knn(graph)
    assert rho[0] == 1.0
    target = np.log2(3)

    def residual(s):
        return 1.0 + np.exp(-1.0 / s) + np.exp(-2.0 / s) - target

    oracle_sigma = brentq(residual, 1e-6, 100.0, xtol=1e-12)
    assert abs(residual(sigma[0])) < 1e-5
    assert sigma[0] == pytest.approx(oracle_sigma, abs=1e-4)


def test_calibration_nearest_weight_is_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    graph = exact_knn(x, 8)
    rho, sigma = calibrate_smooth_knn(graph)
    weights = np.exp(-np.maximum(graph.dists - rho[:, None], 0.0) / sigma[:, None])
    np.testing.assert_allclose(weights[:, 0], 1.0)


def test_calibration_degenerate_equal_distances():
    # node 0 at the centre of a cross: all four neighbours at distance 2
    x = np.array([[0.0, 0.0], [2.0, 0.0], [-2.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    graph = exact_knn(x, 4)
    rho, sigma = calibrate_smooth_knn(graph)
    assert rho[0] == 2.0
    assert sigma[0] == pytest.approx(1e-3 * 2.0)


def test_calibration_residual_bound():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(100, 5))
    graph = exact_knn(x, 12)
    rho, sigma = calibrate_smooth_knn(graph)
    sums = np.exp(-np.maximum(graph.dists - rho[:, None], 0.0) / sigma[:, None]).sum(axis=1)
    assert np.all(np.abs(sums - np.log2(12)) < 1e-4)


def test_calibration_requires_two_neighbors():
    graph = exact_knn(np.array([[0.0], [1.0], [3.0]]), 1)
    with pytest.raises(npc.PreconditionError):
        calibrate_smooth_knn(graph)


def test_tconorm_identity_and_midpoint():
    # engineered sigmas: pair (0,1) has both directed weights 0.5;
    # pair (1,2) has directed weights (1.0, 0.0)
    indices = np.array([[1], [2], [1]])
    dists = np.array([[1.0], [1.0], [1.0]])
    graph = KnnGraph(indices, dists)
    sigma_half = 1.0 / np.log(2.0)
    rho = np.array([0.0, 1.0, 0.0])
    sigma = np.array([sigma_half, 1.0, 1e-12])
    fuzzy = fuzzy_simplicial_set(graph, rho, sigma)
    lookup = {(i, j): w for i, j, w in zip(fuzzy.head, fuzzy.tail, fuzzy.weights)}
    assert lookup[(0, 1)] == pytest.approx(0.5)  # 0.5 one-way: 0.5 + 0 - 0
    assert lookup[(1, 2)] == pytest.approx(1.0)  # 1.0 vs 0.0 -> 1.0


def test_tconorm_both_halves():
    indices = np.array([[1], [0]])
    dists = np.array([[1.0], [1.0]])
    graph = KnnGraph(indices, dists)
    sigma_half = 1.0 / np.log(2.0)
    fuzzy = fuzzy_simplicial_set(
        graph, np.zeros(2), np.array([sigma_half, sigma_half])
    )
    assert fuzzy.weights[0] == pytest.approx(0.75)  # 0.5 + 0.5 - 0.25


def test_fuzzy_graph_exact_symmetry():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(60, 4))
    graph = exact_knn(x, 10)
    rho, sigma = calibrate_smooth_knn(graph)
    fuzzy = fuzzy_simplicial_set(graph, rho, sigma)
    sparse = fuzzy.to_sparse()
    asym = sparse - sparse.T
    assert asym.nnz == 0 or np.abs(asym.data).max() == 0.0
    assert np.all(fuzzy.weights > 0.0) and np.all(fuzzy.weights <= 1.0)
    # union of directed edge sets
    directed = set()
    for i in range(60):
        for j in graph.indices[i]:
            directed.add((min(i, j), max(i, j)))
    stored = set(zip(fuzzy.head.tolist(), fuzzy.tail.tolist()))
    assert stored == directed


def test_underflowed_strengths_are_dropped():
    # faraway neighbours underflow exp(-shifted/sigma) to exactly 0; the
    # fuzzy graph must not keep such edges (weights stay in (0, 1])
    x = np.array([[0.0], [0.1], [0.2], [0.3], [1e9]])
    graph = exact_knn(x, 4)
    rho, sigma = calibrate_smooth_knn(graph)
    fuzzy = fuzzy_simplicial_set(graph, rho, sigma)
    assert np.all(fuzzy.weights > 0.0)
    stored = set(zip(fuzzy.head.tolist(), fuzzy.tail.tolist()))
    assert all(0 <= i < j <= 4 for i, j in stored)


def test_subnormal_weights_keep_schedule_finite():
    import warnings

    # exp(-719) lands in the subnormal range: positive but so small that
    # max/weight overflows; such edges must be pruned from the schedule
    graph = KnnGraph(
        np.array([[1, 2], [0, 2], [1, 0]]),
        np.array([[1.0, 720.0], [1.0, 719.0], [719.0, 720.0]]),
    )
    fuzzy = fuzzy_simplicial_set(graph, np.zeros(3), np.ones(3))
    assert fuzzy.weights.min() < 2.3e-308  # scenario really hits subnormals
    init = initialize_embedding(fuzzy, 2, "random", seed=0)
    config = UmapConfig(n_neighbors=2, n_epochs=20, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        out = optimize_embedding(fuzzy, init, CurveParams(0.583, 1.3342), config)
    assert np.all(np.isfinite(out.values))


def test_curve_params_frozen_oracle_values():
    # frozen from an independent grid + Nelder-Mead least-squares oracle
    params = fit_curve_params(0.5, 1.0)
    assert params.a == pytest.approx(0.5830, abs=2e-4)
    assert params.b == pytest.approx(1.3342, abs=2e-4)
    params0 = fit_curve_params(0.0, 1.0)
    assert params0.a == pytest.approx(1.9328, abs=2e-4)
    assert params0.b == pytest.approx(0.7905, abs=2e-4)
    # min_dist=0 fit approximates exp(-t)
    t = np.linspace(0.0, 3.0, 50)
    assert np.sqrt(np.mean((params0.kernel(t) - np.exp(-t)) ** 2)) < 0.05


def test_kernel_shape():
    params = fit_curve_params(0.5, 1.0)
    t = np.linspace(0.0, 5.0, 200)
    values = params.kernel(t)
    assert values[0] == 1.0
    assert np.all(np.diff(values) < 0)


def test_curve_requires_positive_spread():
    with pytest.raises(npc.PreconditionError):
        fit_curve_params(0.1, 0.0)


def _fuzzy_for(x, k):
    graph = exact_knn(x, k)
    rho, sigma = calibrate_smooth_knn(graph)
    return fuzzy_simplicial_set(graph, rho, sigma)


def test_init_shapes_and_determinism():
    x, _ = make_blobs([[0, 0], [4, 4]], 30, 0.8, seed=3)
    fuzzy = _fuzzy_for(x, 10)
    for method in ("spectral", "random"):
        first = initialize_embedding(fuzzy, 2, method, seed=9)
        second = initialize_embedding(fuzzy, 2, method, seed=9)
        assert first.values.shape == (60, 2)
        assert np.all(np.isfinite(first.values))
        np.testing.assert_array_equal(first.values, second.values)


def test_spectral_scale_is_ten():
    x, _ = make_blobs([[0, 0]], 60, 1.0, seed=3)  # one blob: connected graph
    fuzzy = _fuzzy_for(x, 10)
    coords = initialize_embedding(fuzzy, 2, "spectral", seed=0).values
    assert np.abs(coords).max() == pytest.approx(10.0, abs=1e-3)


def test_disconnected_graph_falls_back(caplog):
    # two far-apart cliques: kNN graph splits into two components
    x, _ = make_blobs([[0, 0], [1000, 1000]], 20, 0.1, seed=4)
    fuzzy = _fuzzy_for(x, 5)
    with caplog.at_level(logging.WARNING, logger="npcluster"):
        coords = initialize_embedding(fuzzy, 2, "spectral", seed=0)
    assert np.all(np.isfinite(coords.values))
    assert any("connected components" in r.message for r in caplog.records)


def test_optimize_zero_epochs_is_identity():
    x, _ = make_blobs([[0, 0], [4, 4]], 20, 0.5, seed=5)
    fuzzy = _fuzzy_for(x, 8)
    init = initialize_embedding(fuzzy, 2, "random", seed=1)
    config = UmapConfig(n_neighbors=8, n_epochs=0, seed=1)
    out = optimize_embedding(fuzzy, init, CurveParams(0.583, 1.3342), config)
    np.testing.assert_array_equal(out.values, init.values)


def test_optimize_separates_blobs():
    x, true = make_blobs([[0] * 50, [20 / np.sqrt(50)] * 50], 100, 1.0, seed=6)
    config = UmapConfig(n_neighbors=30, min_dist=0.5, p=2, seed=0, n_epochs=300)
    emb = embed(npc.FeatureMatrix(x.astype(np.float32)), config)
    result = npc.kmeans_fit(emb, 2, n_init=5, seed=0)
    assert npc.ari(true, result.labels.labels) == 1.0


def test_embed_deterministic_bitwise():
    x, _ = make_blobs([[0, 0, 0], [5, 5, 5]], 40, 0.6, seed=7)
    config = UmapConfig(n_neighbors=15, seed=3, n_epochs=50)
    feats = npc.FeatureMatrix(x.astype(np.float32))
    e1 = embed(feats, config)
    e2 = embed(feats, config)
    assert e1.values.tobytes() == e2.values.tobytes()


def test_layout_neighbor_lookup():
    from npcluster.layout import _is_neighbor

    indptr = np.array([0, 3, 4, 6], dtype=np.int64)
    neighbors = np.array([2, 5, 9, 0, 1, 7], dtype=np.int64)
    assert _is_neighbor(indptr, neighbors, 0, 5)
    assert _is_neighbor(indptr, neighbors, 0, 9)
    assert not _is_neighbor(indptr, neighbors, 0, 1)
    assert _is_neighbor(indptr, neighbors, 1, 0)
    assert _is_neighbor(indptr, neighbors, 2, 7)
    assert not _is_neighbor(indptr, neighbors, 2, 9)


def test_embed_other_dimensions():
    x, _ = make_blobs([[0, 0, 0]], 40, 1.0, seed=12)
    feats = npc.FeatureMatrix(x.astype(np.float32))
    for p in (1, 3):
        emb = embed(feats, UmapConfig(n_neighbors=10, p=p, n_epochs=30, seed=0))
        assert emb.values.shape == (40, p)
        assert np.all(np.isfinite(emb.values))


def test_parallel_mode_separates_blobs():
    # racy kernel: reproducible only in distribution, so assert quality
    x, true = make_blobs([[0] * 20, [25] + [0] * 19], 100, 1.0, seed=0)
    config = UmapConfig(n_neighbors=25, seed=0, n_epochs=100, deterministic=False)
    emb = embed(npc.FeatureMatrix(x.astype(np.float32)), config)
    assert np.all(np.isfinite(emb.values))
    result = npc.kmeans_fit(emb, 2, n_init=5, seed=0)
    assert npc.ari(true, result.labels.labels) == 1.0


def test_embed_precondition():
    x = np.zeros((10, 3), dtype=np.float32)
    with pytest.raises(npc.PreconditionError, match="n_neighbors"):
        embed(npc.FeatureMatrix(x + np.arange(30).reshape(10, 3).astype(np.float32)),
              UmapConfig(n_neighbors=10))


def test_config_validation():
    with pytest.raises(npc.ConfigError):
        UmapConfig(n_neighbors=1)
    with pytest.raises(npc.ConfigError):
        UmapConfig(min_dist=2.0, spread=1.0)
    with pytest.raises(npc.ConfigError):
        UmapConfig(init="pca")


def test_edge_list_dump(tmp_path):
    x, _ = make_blobs([[0, 0]], 20, 0.5, seed=8)
    fuzzy = _fuzzy_for(x, 5)
    path = tmp_path / "graph.txt"
    fuzzy.write_edge_list(path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == fuzzy.head.size
    i, j, w = lines[0].split()
    assert int(i) < int(j) and 0.0 < float(w) <= 1.0