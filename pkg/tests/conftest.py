import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, title, ok, detail):
        _ACCEPTANCE.append((number, f"criterion {number} [{'PASS' if ok else 'FAIL'}] "
                                    f"{title}: {detail}"))
        print(_ACCEPTANCE[-1][1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
