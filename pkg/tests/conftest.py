import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from rpareto.variogram import Location, VariogramParams, regular_grid  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def grid16():
    return regular_grid(4, 4, extent=10.0)


@pytest.fixture
def truth():
    return VariogramParams(1.0, 2.5)


@pytest.fixture
def two_sites():
    return [Location("a", 0.0, 0.0), Location("b", 3.0, 0.0)]


def random_sites(rng, n, extent=20.0):
    xy = rng.uniform(0, extent, size=(n, 2))
    return [Location(f"s{i}", float(x), float(y)) for i, (x, y) in enumerate(xy)]


def random_positive(rng, n, scale=1.0):
    return scale * np.exp(rng.normal(0.0, 1.0, size=n))
