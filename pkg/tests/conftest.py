import numpy as np
import pytest

from bagofviews import SceneSpec, make_procedural_scene

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def tower():
    return make_procedural_scene(SceneSpec("tower"), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
