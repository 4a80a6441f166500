import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(num: int, title: str, passed: bool, detail: str):
        ACCEPTANCE[num] = (title, passed, detail)
        print(f"[acceptance {num}] {'PASS' if passed else 'FAIL'} {title}: {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{num}. {'PASS' if passed else 'FAIL'}  {title}: {detail}")
