import numpy as np
import pytest


def make_blobs(centers, n_per, sigma, seed, d=None):
    """Seeded spherical Gaussian mixture; returns (points, labels)."""
    rng = np.random.default_rng(seed)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if d is not None and centers.shape[1] != d:
        padded = np.zeros((centers.shape[0], d))
        padded[:, : centers.shape[1]] = centers
        centers = padded
    k = centers.shape[0]
    points = np.vstack([rng.normal(c, sigma, size=(n_per, centers.shape[1]))
                        for c in centers])
    labels = np.repeat(np.arange(k), n_per)
    return points, labels


@pytest.fixture
def blobs():
    return make_blobs


@pytest.fixture
def announce(capsys):
    """Print a line to the real terminal even under output capture."""

    def _announce(line):
        with capsys.disabled():
            print(line)

    return _announce
