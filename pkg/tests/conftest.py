import gzip
import os
from pathlib import Path

import numpy as np
import pytest

from termembed.data import write_idx

MNIST_ENV = "TEMB_MNIST_DIR"
_MNIST_NAMES = [("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")]


def pytest_addoption(parser):
    parser.addoption("--full", action="store_true", default=False,
                     help="also run the n = 4000 MNIST check")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --full")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


def _find(directory: Path, stem: str):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = directory / name
        if p.exists():
            return p
    return None


def real_mnist_files():
    """``(images, labels)`` of the real MNIST training files, if configured."""
    d = os.environ.get(MNIST_ENV)
    if not d:
        return None
    img, lab = (_find(Path(d), s) for s in _MNIST_NAMES[0])
    return (img, lab) if img and lab else None


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """IDX files holding MNIST digits.

    Uses the real training files when ``TEMB_MNIST_DIR`` points at them, and
    otherwise the 5000-digit MNIST sample bundled with mlxtend (500 per
    class), written out as IDX so the package's reader is exercised.
    """
    real = real_mnist_files()
    if real is not None:
        return real
    mlx = pytest.importorskip("mlxtend.data")
    X, y = mlx.mnist_data()
    out = tmp_path_factory.mktemp("mnist")
    img, lab = out / "images-idx3-ubyte", out / "labels-idx1-ubyte"
    write_idx(img, lab, np.asarray(X, dtype=np.uint8).reshape(-1, 28, 28), np.asarray(y))
    return img, lab


def gzip_copy(src: Path, dst: Path) -> Path:
    dst.write_bytes(gzip.compress(src.read_bytes()))
    return dst
