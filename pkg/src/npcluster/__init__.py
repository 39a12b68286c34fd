"""Nonparametric clustering of deep feature vectors.

Pipeline: read high-dimensional features, project them onto a
low-dimensional manifold, cluster the embedding with a truncated
Dirichlet process Gaussian mixture fit by variational inference, and
score the result with matching-based accuracy, NMI and ARI.
"""

__version__ = "0.1.0"

from .data import (
    EmbeddingMatrix,
    FeatureMatrix,
    LabelVector,
    read_embedding,
    read_features,
    read_labels,
    relabel_contiguous,
    write_embedding,
    write_features,
    write_labels,
)
from .dpgmm import (
    ClusterResult,
    DpgmmConfig,
    DpgmmState,
    elbo,
    extract_result,
    fit,
    init_state,
    stick_breaking_weights,
    update_components,
    update_responsibilities,
)
from .errors import (
    ConfigError,
    FormatError,
    NpclusterError,
    NumericalError,
    PreconditionError,
)
from .kmeans import KmeansResult, kmeans_fit
from .knn import KnnGraph, build_knn, exact_knn, nn_descent
from .manifold import (
    CurveParams,
    FuzzyGraph,
    UmapConfig,
    calibrate_smooth_knn,
    embed,
    fit_curve_params,
    fuzzy_simplicial_set,
    initialize_embedding,
    optimize_embedding,
)
from .metrics import (
    ContingencyTable,
    MetricsReport,
    ari,
    clustering_accuracy,
    contingency,
    evaluate,
    hungarian,
    nmi,
)

__all__ = [
    "EmbeddingMatrix",
    "FeatureMatrix",
    "LabelVector",
    "read_embedding",
    "read_features",
    "read_labels",
    "relabel_contiguous",
    "write_embedding",
    "write_features",
    "write_labels",
    "ClusterResult",
    "DpgmmConfig",
    "DpgmmState",
    "elbo",
    "extract_result",
    "fit",
    "init_state",
    "stick_breaking_weights",
    "update_components",
    "update_responsibilities",
    "ConfigError",
    "FormatError",
    "NpclusterError",
    "NumericalError",
    "PreconditionError",
    "KmeansResult",
    "kmeans_fit",
    "KnnGraph",
    "build_knn",
    "exact_knn",
    "nn_descent",
    "CurveParams",
    "FuzzyGraph",
    "UmapConfig",
    "calibrate_smooth_knn",
    "embed",
    "fit_curve_params",
    "fuzzy_simplicial_set",
    "initialize_embedding",
    "optimize_embedding",
    "ContingencyTable",
    "MetricsReport",
    "ari",
    "clustering_accuracy",
    "contingency",
    "evaluate",
    "hungarian",
    "nmi",
]
