import numpy as np
import pytest
from PIL import Image


def paint_images(root, classes, per_class, size=(40, 32), seed=0):
    """Write a class-per-subdirectory tree of small solid-noise images."""
    rng = np.random.default_rng(seed)
    for name in classes:
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        base = rng.integers(0, 256, size=3)
        for i in range(per_class):
            pixels = np.clip(
                base + rng.integers(-30, 30, size=(size[1], size[0], 3)),
                0, 255,
            ).astype(np.uint8)
            Image.fromarray(pixels).save(class_dir / f"img_{i:03d}.png")


@pytest.fixture
def image_tree(tmp_path):
    root = tmp_path / "images"
    paint_images(root, ["forest", "water"], 2)
    return root


@pytest.fixture
def availability_probe():
    """Best-effort check whether pretrained weights are reachable."""

    def probe():
        import socket

        try:
            socket.getaddrinfo("huggingface.co", 443)
            return True
        except OSError:
            return False

    return probe
