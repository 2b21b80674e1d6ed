import numpy as np
import pytest

from gradxfem.material import MaterialParams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def plate_material():
    return MaterialParams(E=260000.0, nu=0.3, sigma_y=200.0, n=5.0, l=5e-3)


@pytest.fixture
def elastic_material():
    return MaterialParams(E=200000.0, nu=0.3, sigma_y=400.0, n=5.0, elastic=True)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line: report(number, passed, text)."""

    def add(number, passed, text):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
