import numpy as np
import pytest

from walkstress.synth import canonical_benchmark, canonical_route, synth_session


@pytest.fixture(scope="session")
def small_route():
    return canonical_route("outdoor8", duration_scale=0.1)


@pytest.fixture(scope="session")
def small_session(small_route):
    session, truth = synth_session(small_route, seed=3)
    return session, truth


@pytest.fixture(scope="session")
def tiny_benchmark():
    """3 participants x 2 walks of a shortened outdoor route."""
    return canonical_benchmark("outdoor8", n_participants=3, n_walks=2, seed=5, duration_scale=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
