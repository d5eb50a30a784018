import numpy as np
import pytest

from rsergodic import chain
from rsergodic.rng import stream


@pytest.fixture
def sym():
    """Symmetric two-state chain with unit switching rates."""
    return chain.validate_generator([[-1.0, 1.0], [1.0, -1.0]])


@pytest.fixture
def asym():
    return chain.validate_generator([[-2.0, 2.0], [1.0, -1.0]])


@pytest.fixture
def rng(request):
    # one stream per test, keyed by the test name
    return stream(12345, request.node.name)


def random_generator(rng, n):
    """Dense irreducible generator with rates in (0.1, 2)."""
    q = rng.uniform(0.1, 2.0, (n, n))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
