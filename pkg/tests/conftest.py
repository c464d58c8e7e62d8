import warnings

import pytest

from bae_optomech.params import DerivedParams

_CRITERIA: list[tuple[int, str]] = []


def _line(n: int, title: str, ok: bool, detail: str) -> str:
    return f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


@pytest.fixture
def record_criterion():
    """Log one PASS/FAIL line for an acceptance criterion and return the verdict."""

    def record(n: int, title: str, ok: bool, detail: str) -> bool:
        line = _line(n, title, ok, detail)
        _CRITERIA.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture
def quiet():
    """Silence regime warnings inside a test."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture
def device():
    """Symmetric device-scale parameters: Omega/gamma = 200 and C = 500."""
    return DerivedParams.dimensionless(Omega=200.0, C=500.0, kappa=2000.0)
