from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parent.parent / "data" / "spambase.csv"

# filled by test_acceptance: criterion id -> (passed, detail)
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def spambase_path():
    if not DATA.exists():
        pytest.skip(f"{DATA} not present")
    return DATA


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid}: {detail}")


@pytest.fixture(scope="session")
def acceptance():
    def record(cid, ok, detail):
        ACCEPTANCE[cid] = (bool(ok), detail)
        return bool(ok)
    return record
