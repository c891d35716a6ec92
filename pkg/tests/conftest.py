import pytest

VERDICT_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[VERDICT_KEY] = {}


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for an acceptance criterion and return the flag."""
    store = request.config.stash[VERDICT_KEY]

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(VERDICT_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        terminalreporter.write_line(store[n])
