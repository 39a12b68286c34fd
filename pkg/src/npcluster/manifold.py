"""Manifold projection: fuzzy kNN graph construction and SGD embedding.

The stages compose as build_knn -> calibrate_smooth_knn ->
fuzzy_simplicial_set -> (spectral or random init) -> optimize_embedding,
with all stochastic steps keyed off one seed.  The output kernel
(1 + a t^(2b))^-1 is fitted once per configuration to the piecewise target
set by ``min_dist`` and ``spread``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares
from scipy.sparse.csgraph import connected_components
from numba import njit, prange

from .data import EmbeddingMatrix, FeatureMatrix
from .errors import ConfigError, NumericalError, PreconditionError
from .knn import KnnGraph, build_knn
from .layout import run_sgd

logger = logging.getLogger("npcluster")

SPECTRAL_DENSE_MAX = 4096


@dataclass(frozen=True)
class UmapConfig:
    """Projection hyperparameters; defaults follow the pipeline settings
    (100 neighbours, minimum separation 0.5, two output dimensions).

    ``n_epochs=None`` resolves to 500 when n < 10,000 and 200 otherwise.
    """

    n_neighbors: int = 100
    min_dist: float = 0.5
    spread: float = 1.0
    p: int = 2
    n_epochs: int | None = None
    negative_sample_rate: int = 5
    initial_learning_rate: float = 1.0
    init: str = "spectral"
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ConfigError("n_neighbors must be >= 2")
        if self.min_dist < 0 or self.min_dist > self.spread:
            raise ConfigError("need 0 <= min_dist <= spread")
        if self.spread <= 0:
            raise ConfigError("spread must be positive")
        if self.p < 1:
            raise ConfigError("embedding dimension must be >= 1")
        if self.init not in ("spectral", "random"):
            raise ConfigError(f"unknown init method {self.init!r}")
        if self.negative_sample_rate < 1:
            raise ConfigError("negative_sample_rate must be >= 1")


@dataclass(frozen=True)
class CurveParams:
    """Output-kernel coefficients: t maps to (1 + a * t^(2b))^-1."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise PreconditionError("curve parameters must be positive")

    def kernel(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 1.0 / (1.0 + self.a * t ** (2.0 * self.b))


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetric weighted graph over samples plus calibration scalars.

    Edges are stored once with head < tail; weights lie in (0, 1].
    """

    n: int
    head: np.ndarray  # (m,) int64
    tail: np.ndarray  # (m,) int64
    weights: np.ndarray  # (m,) float64
    rho: np.ndarray  # (n,)
    sigma: np.ndarray  # (n,)

    def to_sparse(self) -> sp.csr_matrix:
        rows = np.concatenate([self.head, self.tail])
        cols = np.concatenate([self.tail, self.head])
        vals = np.concatenate([self.weights, self.weights])
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsr()

    def write_edge_list(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for i, j, w in zip(self.head, self.tail, self.weights):
                fh.write(f"{i} {j} {w:.17g}\n")


@njit(cache=True, parallel=True)
def _smooth_knn_kernel(dists, n_iter, tol):
    n, k = dists.shape
    target = np.log2(k)
    rho = np.empty(n)
    sigma = np.empty(n)
    global_mean = dists.mean()
    for i in prange(n):
        rho_i = dists[i, 0]
        lo = 0.0
        hi = np.inf
        mid = 1.0
        for _ in range(n_iter):
            psum = 0.0
            for j in range(k):
                shifted = dists[i, j] - rho_i
                if shifted > 0.0:
                    psum += np.exp(-shifted / mid)
                else:
                    psum += 1.0
            if abs(psum - target) < tol:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                if hi == np.inf:
                    mid *= 2.0
                else:
                    mid = (lo + hi) / 2.0
        mean_i = 0.0
        for j in range(k):
            mean_i += dists[i, j]
        mean_i /= k
        if mean_i > 0.0:
            floor = 1e-3 * mean_i
        elif global_mean > 0.0:
            floor = 1e-3 * global_mean
        else:
            floor = 1e-12
        sigma[i] = mid if mid > floor else floor
        rho[i] = rho_i
    return rho, sigma


def calibrate_smooth_knn(graph: KnnGraph):
    """Per-node offset rho (nearest distance) and bandwidth sigma.

    sigma solves sum_j exp(-max(0, d_ij - rho_i)/sigma) = log2(k) by
    bisection (tolerance 1e-5, at most 64 iterations); degenerate
    neighbourhoods fall back to a floor of 1e-3 times the mean neighbour
    distance.
    """
    if graph.k < 2:
        raise PreconditionError("calibration requires at least 2 neighbours per node")
    return _smooth_knn_kernel(graph.dists, 64, 1e-5)


def fuzzy_simplicial_set(graph: KnnGraph, rho, sigma) -> FuzzyGraph:
    """Directed membership strengths combined with the probabilistic t-conorm."""
    n, k = graph.indices.shape
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = graph.indices.ravel()
    shifted = np.maximum(graph.dists - rho[:, None], 0.0)
    vals = np.exp(-shifted / sigma[:, None]).ravel()
    directed = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    transpose = directed.T.tocsr()
    combined = directed + transpose - directed.multiply(transpose)
    combined.eliminate_zeros()  # strengths may underflow to exactly 0
    coo = combined.tocoo()
    upper = coo.row < coo.col
    return FuzzyGraph(
        n=n,
        head=coo.row[upper].astype(np.int64),
        tail=coo.col[upper].astype(np.int64),
        weights=coo.data[upper].astype(np.float64),
        rho=np.asarray(rho, dtype=np.float64),
        sigma=np.asarray(sigma, dtype=np.float64),
    )


def fit_curve_params(min_dist: float, spread: float) -> CurveParams:
    """Least-squares fit of the output kernel to the piecewise target
    (1 below min_dist, exponential decay with the given spread beyond)."""
    if spread <= 0:
        raise PreconditionError("spread must be positive")
    t = np.linspace(0.0, 3.0 * spread, 300)
    target = np.where(t <= min_dist, 1.0, np.exp(-(t - min_dist) / spread))

    def residuals(q):
        a, b = q
        return 1.0 / (1.0 + a * t ** (2.0 * b)) - target

    result = least_squares(residuals, x0=[1.0, 1.0],
                           bounds=([1e-8, 1e-8], [np.inf, np.inf]), max_nfev=200)
    if not result.success:
        raise NumericalError("output-kernel fit did not converge within 200 evaluations")
    rms = float(np.sqrt(np.mean(result.fun**2)))
    if rms >= 0.05:
        raise NumericalError(f"output-kernel fit residual RMS {rms:.4f} exceeds 0.05")
    return CurveParams(a=float(result.x[0]), b=float(result.x[1]))


def _spectral_coords(fuzzy: FuzzyGraph, p: int):
    w = fuzzy.to_sparse()
    n_components, _ = connected_components(w, directed=False)
    if n_components > 1:
        logger.warning(
            "fuzzy graph has %d connected components; spectral init falls back to random",
            n_components,
        )
        return None
    degree = np.asarray(w.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degree)
    scaled = w.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :])
    n = fuzzy.n
    try:
        if n <= SPECTRAL_DENSE_MAX:
            lap = np.eye(n) - scaled.toarray()
            lap = 0.5 * (lap + lap.T)
            _, vecs = np.linalg.eigh(lap)
            coords = vecs[:, 1 : p + 1]
        else:
            lap = (sp.identity(n, format="csr") - scaled.tocsr()).astype(np.float64)
            lap = 0.5 * (lap + lap.T)
            vals, vecs = sp.linalg.eigsh(
                lap, k=p + 1, which="SM", v0=np.ones(n), tol=1e-4, maxiter=5 * n
            )
            order = np.argsort(vals)
            coords = vecs[:, order[1 : p + 1]]
    except Exception as exc:  # eigensolver breakdown -> random fallback
        logger.warning("spectral initialization failed (%s); falling back to random", exc)
        return None
    if not np.all(np.isfinite(coords)) or np.abs(coords).max() == 0.0:
        logger.warning("degenerate spectral coordinates; falling back to random")
        return None
    return coords


def initialize_embedding(fuzzy: FuzzyGraph, p: int, method: str = "spectral",
                         seed: int = 0) -> EmbeddingMatrix:
    """Spectral coordinates (Laplacian eigenvectors 2..p+1, scaled to
    max-abs 10, jittered by +-1e-4) or uniform random in [-10, 10]^p."""
    rng = np.random.default_rng(seed)
    coords = None
    if method == "spectral":
        coords = _spectral_coords(fuzzy, p)
    elif method != "random":
        raise ConfigError(f"unknown init method {method!r}")
    if coords is None:
        return EmbeddingMatrix(rng.uniform(-10.0, 10.0, size=(fuzzy.n, p)))
    coords = coords * (10.0 / np.abs(coords).max())
    coords = coords + rng.uniform(-1e-4, 1e-4, size=coords.shape)
    return EmbeddingMatrix(coords)


def optimize_embedding(fuzzy: FuzzyGraph, init: EmbeddingMatrix,
                       curve: CurveParams, config: UmapConfig) -> EmbeddingMatrix:
    """Cross-entropy SGD over the fuzzy graph starting from ``init``."""
    if init.n != fuzzy.n:
        raise PreconditionError("init shape does not match graph size")
    emb = init.values.copy()
    n_epochs = config.n_epochs
    if n_epochs is None:
        n_epochs = 500 if fuzzy.n < 10_000 else 200
    if n_epochs == 0 or fuzzy.head.size == 0:
        return EmbeddingMatrix(emb)

    head = np.concatenate([fuzzy.head, fuzzy.tail])
    tail = np.concatenate([fuzzy.tail, fuzzy.head])
    weights = np.concatenate([fuzzy.weights, fuzzy.weights])
    # edges sampled less than once in n_epochs never fire; dropping them
    # keeps the schedule finite even for near-underflow weights
    keep = weights >= weights.max() / n_epochs
    head, tail, weights = head[keep], tail[keep], weights[keep]
    eps_sample = weights.max() / weights

    adjacency = fuzzy.to_sparse()
    adjacency.sort_indices()
    run_sgd(
        emb,
        head,
        tail,
        eps_sample,
        adjacency.indptr.astype(np.int64),
        adjacency.indices.astype(np.int64),
        curve.a,
        curve.b,
        config.initial_learning_rate,
        n_epochs,
        config.negative_sample_rate,
        config.seed + 2,
        deterministic=config.deterministic,
    )
    return EmbeddingMatrix(emb)


def embed(features, config: UmapConfig = UmapConfig(),
          graph_dump_path=None) -> EmbeddingMatrix:
    """Full projection of a feature matrix onto the low-dimensional manifold.

    ``graph_dump_path`` optionally writes the fuzzy graph as a text edge
    list ("i j weight" per line) for debugging.
    """
    if isinstance(features, FeatureMatrix):
        n = features.n
    else:
        features = np.ascontiguousarray(features, dtype=np.float64)
        n = features.shape[0]
    if n <= config.n_neighbors:
        raise PreconditionError(
            f"need n > n_neighbors, got n={n}, n_neighbors={config.n_neighbors}"
        )
    graph = build_knn(features, config.n_neighbors, seed=config.seed)
    rho, sigma = calibrate_smooth_knn(graph)
    fuzzy = fuzzy_simplicial_set(graph, rho, sigma)
    if graph_dump_path is not None:
        fuzzy.write_edge_list(graph_dump_path)
    curve = fit_curve_params(config.min_dist, config.spread)
    init = initialize_embedding(fuzzy, config.p, config.init, seed=config.seed + 1)
    return optimize_embedding(fuzzy, init, curve, config)
