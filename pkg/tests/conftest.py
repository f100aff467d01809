import numpy as np
import pytest

from gridscreen import REFERENCE, enumerate_contingencies, load_case
from gridscreen.dataset import generate_dataset

from support import two_bus

ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--run-long", action="store_true", default=False,
                     help="also run opt-in long checks (118-bus N-3 enumeration)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-long"):
        return
    skip = pytest.mark.skip(reason="opt-in long run: pass --run-long")
    for item in items:
        if "longrun" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""
    def _report(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case30():
    return load_case("case30")


@pytest.fixture
def toy():
    return two_bus()


@pytest.fixture(scope="session")
def small14(case14):
    """20 samples on N-0 plus three N-1 topologies (fast unit-test data)."""
    topos = [REFERENCE] + enumerate_contingencies(case14, 1)[:3]
    ds, _ = generate_dataset(case14, topos, 20, seed=0)
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
