"""Shared pytest hooks: collects acceptance verdicts and prints them at the end."""
import pytest

ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record a named acceptance verdict: ``verdict("A", ok, "detail")``."""

    def record(key, ok, detail=""):
        ACCEPTANCE.setdefault(key, []).append((bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[key]
        ok = all(e[0] for e in entries)
        detail = "; ".join(d for _, d in entries if d)
        tr.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
