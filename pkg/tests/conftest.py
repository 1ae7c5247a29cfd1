import contextlib

import pytest

_ACCEPTANCE = []


class _Criterion:
    def __init__(self, name):
        self.name = name
        self.detail = ""


@pytest.fixture
def criterion():
    """``with criterion("name") as c:`` records one PASS/FAIL line."""
    @contextlib.contextmanager
    def record(name):
        c = _Criterion(name)
        try:
            yield c
        except BaseException as exc:
            reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            _ACCEPTANCE.append(f"FAIL  {name}: {c.detail} {reason}".rstrip())
            raise
        _ACCEPTANCE.append(f"PASS  {name}: {c.detail}".rstrip())
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
