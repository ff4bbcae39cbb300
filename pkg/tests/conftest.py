import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glauber_kit.configurations import GridDomain
from glauber_kit.operators import DynamicsParams
from glauber_kit.potential import PairPotential

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

THETA, RANGE = 1.0, 0.25


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def dom8():
    return GridDomain(1, 1.0, 0.125)


@pytest.fixture(scope="session")
def dom6():
    return GridDomain(1, 0.75, 0.125)


@pytest.fixture(scope="session")
def step_potential():
    return PairPotential.truncated_constant(THETA, RANGE)


@pytest.fixture(scope="session")
def params8(dom8, step_potential):
    return DynamicsParams(0.5, 0.05, 1.0, step_potential, dom8)


@pytest.fixture(scope="session")
def params6(dom6, step_potential):
    return DynamicsParams(0.5, 0.1, 1.0, step_potential, dom6)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(capsys):
    """``criterion(n, ok, detail)`` prints one pass/fail line and asserts ``ok``."""
    def report(n: int, ok: bool, detail: str = "") -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
