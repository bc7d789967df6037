import pytest

from primevar.config import make_config
from primevar.prime_engine import table_for
from primevar.pipeline import run_scan


@pytest.fixture(scope="session")
def big_table():
    # covers every window used in the tests (end <= 1e12 + a few 1e7)
    return table_for(10**12 + 10**8)


@pytest.fixture(scope="session")
def desk_rows():
    rows, _ = run_scan(make_config("sample-I-desk"), source="primes")
    return rows


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
