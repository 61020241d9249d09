import time

import numpy as np
import pytest

from ppp.cloud import CloudConfig, generate
from ppp.predictor import SliceSpec, build_table

BUILD_SEED = 11
VALIDATION_SEED = 22
BIG = 1_000_000

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []
# wall-clock seconds spent in the large session fixtures
TIMINGS = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_cloud():
    return generate(CloudConfig(40_000, seed=3, chunk_size=10_000), with_aux=True)


@pytest.fixture(scope="session")
def small_table():
    cloud = generate(CloudConfig(200_000, seed=4, chunk_size=50_000))
    spec = SliceSpec(0.1, np.round(np.arange(-15, 16) / 10, 12))
    return build_table(cloud, spec)


def _timed(name, fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    TIMINGS[name] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def build_cloud():
    return _timed("build_cloud", generate, CloudConfig(BIG, seed=BUILD_SEED), with_aux=True)


@pytest.fixture(scope="session")
def validation_cloud():
    return _timed("validation_cloud", generate, CloudConfig(BIG, seed=VALIDATION_SEED),
                  with_aux=True)


@pytest.fixture(scope="session")
def big_table(build_cloud):
    return _timed("big_table", build_table, build_cloud, SliceSpec())
