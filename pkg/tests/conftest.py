import pytest

from afvae.model import init_params
from toy import TOY


@pytest.fixture
def toy_config():
    return TOY


@pytest.fixture
def toy_params():
    return init_params(TOY, seed=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
