import pytest

_VERDICTS = []


@pytest.fixture
def verdict(request, capsys):
    """Record and print one ``[criterion N] PASS|FAIL`` line."""

    def report(number, ok, detail):
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
