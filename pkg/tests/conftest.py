import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion(request):
    """Attach a criterion label and a detail line to an acceptance test."""
    def record(label: str, detail: str = "") -> None:
        request.node.user_properties.append(("criterion", label))
        request.node.user_properties.append(("detail", detail))
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        props = dict(item.user_properties)
        label = props.get("criterion", item.name)
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _RESULTS.append((status, label, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, label, detail in _RESULTS:
        terminalreporter.write_line(f"{status:4}  {label}" + (f"  [{detail}]" if detail else ""))
