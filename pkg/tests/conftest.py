import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import make_clinc_dict, write_clinc  # noqa: E402


@pytest.fixture(scope="session")
def clinc_dict():
    return make_clinc_dict()


@pytest.fixture(scope="session")
def clinc_file(tmp_path_factory):
    return write_clinc(tmp_path_factory.mktemp("data") / "data_full.json")


# acceptance criteria: tests marked ``criterion(n, title)`` are rolled up into
# one PASS/FAIL line per criterion at the end of the run

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "notes": []})
    if rep.failed:
        entry["ok"] = False
        msg = rep.longreprtext.strip().splitlines()
        entry["notes"].append(f"{item.name}: {msg[-1] if msg else 'failed'}")
    entry["notes"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if entry['ok'] else 'FAIL'}  {entry['title']}"
        )
        for note in dict.fromkeys(entry["notes"]):
            terminalreporter.write_line(f"    {note}")
