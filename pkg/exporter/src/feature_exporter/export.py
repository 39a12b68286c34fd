"""Feature export: images -> pooled backbone features -> FMAT file.

Rows follow the deterministic source order (sorted paths or dataset
index, after seeded stratified subsampling when a limit is set).
Undecodable images are skipped with a warning and recorded in the
manifest, which also pins the model identity, weight hash and
preprocessing constants so downstream results stay attributable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import (
    CHANNEL_MEAN,
    CHANNEL_STD,
    FEATURE_DIMS,
    IMAGE_SIZE,
    load_backbone,
)
from .fmat import write_fmat
from .images import load_cifar10, preprocess, scan_folder, stratified_subsample

logger = logging.getLogger("feature_exporter")


@dataclass(frozen=True)
class ExportSpec:
    """What to export: an image-folder tree or ``cifar10``/``cifar10-test``."""

    source: str
    output_path: str
    model_size: str = "base"
    batch_size: int = 16
    limit: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.model_size not in FEATURE_DIMS:
            raise ValueError(f"model_size must be one of {sorted(FEATURE_DIMS)}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be >= 1 when set")


def _iter_folder(paths, labels, skipped):
    for path, label in zip(paths, labels):
        try:
            with Image.open(path) as image:
                yield preprocess(image), int(label), str(path)
        except Exception as exc:
            logger.warning("skipping undecodable image %s (%s)", path, exc)
            skipped.append({"path": str(path), "reason": str(exc)})


def _iter_cifar(dataset, indices):
    for idx in indices:
        image, label = dataset[int(idx)]
        yield preprocess(image), int(label), f"cifar10[{int(idx)}]"


def export_features(spec: ExportSpec, backbone=None) -> dict:
    """Run the export; returns the manifest (also written alongside the
    output as ``<output>.manifest.json``)."""
    if backbone is None:
        backbone = load_backbone(spec.model_size)
    if backbone.dim != FEATURE_DIMS[spec.model_size]:
        raise ValueError(
            f"backbone dim {backbone.dim} does not match "
            f"model_size={spec.model_size!r}"
        )
    skipped: list[dict] = []
    if spec.source in ("cifar10", "cifar10-train", "cifar10-test"):
        cache = Path(spec.output_path).parent / "cifar10-cache"
        dataset, labels = load_cifar10(cache, train=spec.source != "cifar10-test")
        indices = np.arange(labels.shape[0])
        if spec.limit is not None:
            indices = stratified_subsample(labels, spec.limit, spec.seed)
        samples = _iter_cifar(dataset, indices)
        classes = [str(c) for c in dataset.classes]
        source_kind = "cifar10"
    else:
        paths, labels, classes = scan_folder(spec.source)
        if spec.limit is not None:
            keep = stratified_subsample(labels, spec.limit, spec.seed)
            paths = [paths[i] for i in keep]
            labels = labels[keep]
        samples = _iter_folder(paths, labels, skipped)
        source_kind = "folder"

    rows: list[np.ndarray] = []
    out_labels: list[int] = []
    batch: list[torch.Tensor] = []
    batch_labels: list[int] = []

    def flush():
        if not batch:
            return
        features = backbone.embed_batch(torch.stack(batch))
        rows.append(features)
        out_labels.extend(batch_labels)
        batch.clear()
        batch_labels.clear()

    for tensor, label, _name in samples:
        batch.append(tensor)
        batch_labels.append(label)
        if len(batch) == spec.batch_size:
            flush()
    flush()

    if not rows:
        raise ValueError(f"no decodable images in {spec.source}")
    values = np.vstack(rows)
    labels_arr = np.asarray(out_labels, dtype=np.int64)
    write_fmat(values, labels_arr, spec.output_path)

    manifest = {
        "source": spec.source,
        "source_kind": source_kind,
        "model_id": backbone.model_id,
        "model_size": spec.model_size,
        "weight_hash": backbone.weight_hash(),
        "pooling": backbone.pooling,
        "feature_dim": int(values.shape[1]),
        "n_exported": int(values.shape[0]),
        "classes": classes,
        "preprocessing": {
            "image_size": IMAGE_SIZE,
            "interpolation": "bicubic",
            "channel_mean": list(CHANNEL_MEAN),
            "channel_std": list(CHANNEL_STD),
        },
        "limit": spec.limit,
        "seed": spec.seed,
        "skipped": skipped,
        "output": str(spec.output_path),
    }
    manifest_path = Path(str(spec.output_path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="ascii")
    return manifest
