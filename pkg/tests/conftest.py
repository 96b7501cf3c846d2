import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def report(request):
    """Collects one pass/fail line per acceptance criterion; printed after the run."""
    lines = request.config.stash.setdefault(_LINES, [])

    def add(n: int, ok: bool, text: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}"
        lines.append(line)
        print(line)
        return ok

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
