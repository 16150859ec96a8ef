import pytest

from sgstokes.problem import build_problem

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def small_problem():
    """level=2, M=2, k=2, sigma=0.1 with the exact unit-Laplacian preconditioner."""
    return build_problem(2, 2, 2, sigma=0.1, laplacian_mode="exact-unweighted")


@pytest.fixture(scope="session")
def tiny_problem():
    return build_problem(1, 2, 1, sigma=0.1, laplacian_mode="exact-unweighted")


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
