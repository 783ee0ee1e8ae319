import numpy as np
import pytest

from mhdpress.linearized import MHDOperators
from mhdpress.mesh import builtin, hollow_box, unit_cube


@pytest.fixture(scope="session")
def cube2():
    return unit_cube(2)


@pytest.fixture(scope="session")
def cube3():
    return unit_cube(3)


@pytest.fixture(scope="session")
def hollow2():
    return builtin("hollow-box:2:1")


@pytest.fixture(scope="session")
def hollow3():
    return builtin("hollow-box:3:1")


@pytest.fixture(scope="session")
def two_cavity():
    return hollow_box(2, 2)


@pytest.fixture(scope="session")
def cube_ops2(cube2):
    return MHDOperators(cube2, 2)


@pytest.fixture(scope="session")
def cube_ops1(cube2):
    return MHDOperators(cube2, 1)


@pytest.fixture(scope="session")
def hollow_ops2(hollow2):
    return MHDOperators(hollow2, 2)


@pytest.fixture(scope="session")
def hollow_ops1(hollow2):
    return MHDOperators(hollow2, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion; an expected failure counts as FAIL."""
    outcomes = {}
    for key in ("passed", "failed", "xfailed", "xpassed", "error", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion" not in nodeid or rep.when not in ("call", "setup"):
                continue
            crit = int(nodeid.split("test_criterion")[1][:2])
            ok = key == "passed"
            outcomes[crit] = outcomes.get(crit, True) and ok
    if not outcomes:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for crit in sorted(outcomes):
        status = "PASS" if outcomes[crit] else "FAIL"
        terminalreporter.write_line(f"criterion {crit:2d} {status}  {CRITERIA[crit]}")
