import numpy as np
import pytest

from metarobust.data import EpisodeShape, generate_gaussian_universe, split_classes
from metarobust.extractor import ExtractorArch, init_params


@pytest.fixture(scope="session")
def small_universe():
    ds, centers = generate_gaussian_universe(20, 6, 1.0, 0.3, 40, seed=11)
    split = split_classes(ds.manifest, (0.5, 0.25, 0.25), seed=12)
    return ds, split, centers


@pytest.fixture(scope="session")
def benchmark_data():
    from metarobust.benchmark import build
    return build()


@pytest.fixture(scope="session")
def standard_model(benchmark_data):
    from metarobust.benchmark import STANDARD
    from metarobust.meta import train
    ds, split = benchmark_data
    params, log = train(ds, split, STANDARD)
    return params, log


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params():
    return init_params(ExtractorArch((6, 8, 4)), seed=5)


@pytest.fixture
def small_shape():
    return EpisodeShape(K=3, J=2, M=6, Q=5)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
