import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")

MNIST_DIR = Path(os.environ.get("MOREAU_FL_MNIST", Path.home() / "data" / "mnist"))


def mnist_available() -> bool:
    return all((MNIST_DIR / f"{stem}.gz").exists() or (MNIST_DIR / stem).exists()
               for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                            "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"))


needs_mnist = pytest.mark.skipif(not mnist_available(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


@pytest.fixture
def rng():
    # Test-side randomness for building inputs; the library never sees it.
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    from moreau_fl.data import SyntheticParams, generate_synthetic
    return generate_synthetic(SyntheticParams(N=6, size_max=400), seed=3)


# Acceptance verdicts, filled in by tests/test_acceptance.py and echoed at the end of the run.
VERDICTS: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
