import time
from contextlib import contextmanager

import pytest

_LINES = {}
_NOTES = []


@contextmanager
def _criterion(number, title, limit=None):
    """Record PASS/FAIL for one acceptance criterion, including its runtime bound."""
    start = time.perf_counter()
    detail = {"text": ""}
    try:
        yield detail
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        if type(exc).__name__ in ("XFailed", "Skipped"):
            _LINES[number] = f"[{number:>2}] FAIL  {title} ({elapsed:.1f}s): {exc}"
        else:
            _LINES[number] = f"[{number:>2}] FAIL  {title} ({elapsed:.1f}s): {type(exc).__name__}: {exc}"
        raise
    elapsed = time.perf_counter() - start
    if limit is not None and elapsed > limit:
        _LINES[number] = f"[{number:>2}] FAIL  {title}: runtime {elapsed:.1f}s exceeds {limit}s"
        pytest.fail(f"criterion {number} took {elapsed:.1f}s (limit {limit}s)")
    extra = f" {detail['text']}" if detail["text"] else ""
    _LINES[number] = f"[{number:>2}] PASS  {title} ({elapsed:.2f}s){extra}"


@pytest.fixture
def criterion():
    return _criterion


@pytest.fixture
def note():
    return _NOTES.append


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
    for line in _NOTES:
        terminalreporter.write_line(line)
