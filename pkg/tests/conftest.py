import numpy as np
import pytest

from app.landscape.model import LossSpec, generate_instance


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run long acceptance tests",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def loss():
    return LossSpec(0.01)


@pytest.fixture
def small_instance():
    return generate_instance(12, 3.0, seed=7)


@pytest.fixture
def medium_instance():
    return generate_instance(128, 3.0, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
