import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from narf.gauge_field import GridSpec

settings.register_profile(
    "narf",
    deadline=None,
    max_examples=15,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("narf")


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32, 1.0)


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(64, 1.0)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)
    print(f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
