import numpy as np
import pytest

from turbrestore.simulate import test_card


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def card64():
    return test_card(64)


@pytest.fixture(scope="session")
def card128():
    return test_card(128)


# --- acceptance reporting: one line per criterion at the end of the run ---

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": True, "seen": False, "notes": []})
    if report.failed:
        entry["passed"] = False
        entry["seen"] = True
    elif report.when == "call":
        entry["seen"] = True
    if report.when == "call":
        entry["notes"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        if not e["seen"]:
            continue
        status = "PASS" if e["passed"] else "FAIL"
        notes = f" [{', '.join(e['notes'])}]" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {n:2d} {status}: {e['title']}{notes}")
