from functools import lru_cache

import pytest

from slpopf.case_io import load_case
from slpopf.network import build_network


@lru_cache(maxsize=None)
def network(name: str):
    return build_network(load_case(name))


@pytest.fixture
def case9():
    return network("case9")


@pytest.fixture
def case33():
    return network("case33bw")


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
