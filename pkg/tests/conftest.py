import pytest

acceptance_key = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo checks")
    config.stash[acceptance_key] = {}


@pytest.fixture
def acceptance_log(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run acceptance summary."""
    log = request.config.stash[acceptance_key]

    def record(number: int, title: str, passed: bool, detail: str = ""):
        log[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(acceptance_key, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        title, ok, detail = log[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
