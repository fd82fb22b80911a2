import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from hybrid_snn.tensor import set_precision

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

MNIST_DIR = Path(os.environ.get("HYBRID_SNN_MNIST", "/root/data/mnist"))


def mnist_available() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").exists() or \
        (MNIST_DIR / "train-images-idx3-ubyte.gz").exists()


@pytest.fixture(autouse=True)
def _reset_precision():
    set_precision(32)
    yield
    set_precision(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
