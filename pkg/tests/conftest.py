import os
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]
DESK_MNIST = REPO / "data" / "mnist-desk"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir():
    """The bundled 8000/2000 MNIST subset, or $NLCNN_DATA_DIR if it points elsewhere."""
    env = os.environ.get("NLCNN_DATA_DIR")
    d = Path(env) if env else DESK_MNIST
    if not (d / "train-images-idx3-ubyte.gz").exists() and not (d / "train-images-idx3-ubyte").exists():
        pytest.skip(f"no MNIST IDX files in {d}")
    return d


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """``acceptance(number, ok, detail)`` records one criterion verdict and asserts it;
    ``ok=None`` records a skip and skips the test."""
    def record(number, ok, detail):
        verdict = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"criterion {number}: {verdict}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        if ok is None:
            pytest.skip(detail)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
