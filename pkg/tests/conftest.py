import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from patgen.diffusion import linear_beta_schedule, make_rng  # noqa: E402


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(scope="session")
def toy_sched():
    return linear_beta_schedule(50, 0.01, 0.5)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number][1])
