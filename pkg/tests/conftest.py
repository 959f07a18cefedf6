import os

import pytest

_LINES: list[str] = []


def record_criterion(number, name, ok, detail):
    """Remember one acceptance verdict for the end-of-run summary."""
    line = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})"
    _LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def criterion():
    return record_criterion


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CFRCAST_PAPER_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="paper-scale run; set CFRCAST_PAPER_SCALE=1")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
