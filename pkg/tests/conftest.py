import pytest

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """Record a numbered acceptance criterion; prints its verdict and asserts it."""
    lines = request.config.stash[_CRITERIA]

    def record(number: int, title: str, checks: dict[str, bool], detail: str = ""):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if failed:
            line += f"  [failed: {', '.join(failed)}]"
        if detail:
            line += f"  ({detail})"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
