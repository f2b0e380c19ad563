import numpy as np
import pytest

from dimentropy.systems import get_system


@pytest.fixture(scope="session")
def doubling():
    return get_system("doubling")


@pytest.fixture(scope="session")
def cubic():
    return get_system("power:3")


@pytest.fixture(scope="session")
def henon():
    return get_system("henon:-1.4,0.3")


@pytest.fixture(scope="session")
def cat():
    return get_system("cat")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
