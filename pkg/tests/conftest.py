import os
from pathlib import Path

import numpy as np
import pytest

MNIST_ROOT = Path(os.environ.get("RAE_DATA_ROOT", "/root/data/mnist"))


def mnist_available() -> bool:
    return (MNIST_ROOT / "train-images-idx3-ubyte").exists() or \
        (MNIST_ROOT / "train-images-idx3-ubyte.gz").exists()


@pytest.fixture(scope="session")
def mnist_root():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found under {MNIST_ROOT} (set RAE_DATA_ROOT)")
    return MNIST_ROOT


@pytest.fixture(scope="session")
def mnist_split(mnist_root):
    from rae.data import load_mnist, pad_and_split

    train, test = load_mnist(mnist_root)
    return pad_and_split(train, 10000, seed=0, test=test)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
