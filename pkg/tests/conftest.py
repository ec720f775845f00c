import numpy as np
import pytest

from pilotbox.wavefunction import Mode, PhysParams, Superposition, appendix_superposition


@pytest.fixture(scope="session")
def sup():
    return appendix_superposition()


@pytest.fixture(scope="session")
def single_mode():
    return Superposition((Mode(1, 1),), (0.0,))


def gauss_legendre_2d(L, n):
    """Nodes (n, n, 2) and weights (n, n) of tensor Gauss-Legendre on [0, L]^2."""
    g, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * L * (g + 1.0)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) * (0.5 * L) ** 2
    return np.stack([X1, X2], axis=-1), W


@pytest.fixture(scope="session")
def static_params():
    return PhysParams(v_expand=0.0)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
