import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from exph.frame_geometry import build_framed_torus

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def flat16():
    return build_framed_torus("flat", (16, 16, 16))


@pytest.fixture(scope="session", params=["flat", "stretched", "twisted"])
def preset16(request):
    return build_framed_torus(request.param, (16, 16, 16))
