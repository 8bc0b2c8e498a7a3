import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def pytest_addoption(parser):
    parser.addoption("--mnist-dir", default=os.path.join(REPO_ROOT, "data", "mnist"),
                     help="directory with the four MNIST IDX files (used by the acceptance suite)")


@pytest.fixture
def mnist_dir(request):
    return request.config.getoption("--mnist-dir")


def pytest_terminal_summary(terminalreporter):
    from tests_support import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
