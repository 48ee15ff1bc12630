import numpy as np
import pytest

from fractrace.ifs import compute_branch_data
from fractrace.systems import koch, load_system, sierpinski, tent


@pytest.fixture(scope="session")
def tent_system():
    return tent()


@pytest.fixture(scope="session")
def sierpinski_system():
    return sierpinski()


@pytest.fixture(scope="session")
def koch_system():
    return koch()


@pytest.fixture(scope="session")
def plin_system():
    return load_system("plin:0.3,0.7")


@pytest.fixture(scope="session")
def tent_branch(tent_system):
    return compute_branch_data(tent_system)


@pytest.fixture(scope="session")
def sierpinski_branch(sierpinski_system):
    return compute_branch_data(sierpinski_system)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        for line in mod.RESULTS[number]:
            terminalreporter.write_line(line)
