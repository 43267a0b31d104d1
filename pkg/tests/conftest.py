import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``check(number, title, ok, detail)`` records a verdict, then asserts it."""

    def check(number, title, ok, detail):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}): {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
