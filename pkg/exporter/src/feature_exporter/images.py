"""Image sources: class-per-subdirectory folders and CIFAR-10.

Samples are always enumerated in a deterministic order (sorted paths or
dataset index) so exports are reproducible; optional subsampling is
stratified by label and driven by a seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import CHANNEL_MEAN, CHANNEL_STD, IMAGE_SIZE

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

_MEAN = torch.tensor(CHANNEL_MEAN).view(3, 1, 1)
_STD = torch.tensor(CHANNEL_STD).view(3, 1, 1)


class DatasetUnavailableError(RuntimeError):
    """Named dataset could not be obtained (typically: no network)."""


def preprocess(image: Image.Image) -> torch.Tensor:
    """Resize to the expected input size (bicubic) and normalize with the
    backbone's published channel statistics."""
    image = image.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BICUBIC)
    array = np.asarray(image, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(array).permute(2, 0, 1)
    return (tensor - _MEAN) / _STD


def scan_folder(root) -> tuple[list[Path], np.ndarray, list[str]]:
    """Sorted class-per-subdirectory listing -> (paths, labels, class names)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory not found: {root}")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise FileNotFoundError(f"no class subdirectories under {root}")
    paths: list[Path] = []
    labels: list[int] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            f for f in class_dir.rglob("*")
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
        )
        paths.extend(files)
        labels.extend([label] * len(files))
    if not paths:
        raise FileNotFoundError(f"no images under {root}")
    return paths, np.asarray(labels, dtype=np.int64), [d.name for d in class_dirs]


def stratified_subsample(labels: np.ndarray, limit: int, seed: int) -> np.ndarray:
    """Per-class proportional pick of ``limit`` indices, original order kept."""
    n = labels.shape[0]
    if limit >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    quota = np.maximum(1, np.floor(limit * counts / n).astype(np.int64))
    while quota.sum() > limit:
        quota[int(np.argmax(quota))] -= 1
    shortfall = limit - quota.sum()
    order = np.argsort(-(counts - quota), kind="stable")
    for idx in order[:shortfall]:
        quota[idx] += 1
    picked = []
    for cls, take in zip(classes, quota):
        members = np.flatnonzero(labels == cls)
        picked.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(picked))


def load_cifar10(root, train: bool = True):
    """CIFAR-10 via torchvision; raises DatasetUnavailableError offline."""
    from torchvision.datasets import CIFAR10

    try:
        dataset = CIFAR10(root=str(root), train=train, download=True)
    except Exception as exc:
        raise DatasetUnavailableError(f"cannot obtain CIFAR-10: {exc}") from None
    labels = np.asarray(dataset.targets, dtype=np.int64)
    return dataset, labels
