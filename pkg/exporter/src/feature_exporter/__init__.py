"""Pooled deep-feature export to the FMAT container."""

__version__ = "0.1.0"

from .backbone import (
    FEATURE_DIMS,
    Dinov2Backbone,
    StubBackbone,
    WeightsUnavailableError,
    load_backbone,
)
from .export import ExportSpec, export_features
from .fmat import write_fmat
from .images import DatasetUnavailableError

__all__ = [
    "FEATURE_DIMS",
    "Dinov2Backbone",
    "StubBackbone",
    "WeightsUnavailableError",
    "load_backbone",
    "ExportSpec",
    "export_features",
    "write_fmat",
    "DatasetUnavailableError",
]
