import pytest

_OUTCOMES = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.fixture
def detail(request):
    """Callable that attaches a one-line measurement summary to the current criterion."""
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        if marker is not None:
            _DETAILS.setdefault(marker.args[0], []).append(text)

    return note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    item_marker = _MARKERS.get(report.nodeid)
    if item_marker is not None:
        _OUTCOMES[item_marker] = report.outcome


_MARKERS = {}
_TITLES = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _MARKERS[item.nodeid] = m.args[0]
            _TITLES[m.args[0]] = m.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        status = "PASS" if _OUTCOMES[num] == "passed" else "FAIL"
        extra = "; ".join(_DETAILS.get(num, []))
        tr.write_line(f"criterion {num:2d} {status}  {_TITLES[num]}" + (f"  [{extra}]" if extra else ""))
