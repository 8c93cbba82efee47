import time

import pytest

_CRITERIA = {}


class _Recorder:
    def __init__(self, number):
        self.number = number
        self.start = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self.start

    def __call__(self, passed, detail):
        _CRITERIA.setdefault(self.number, []).append((bool(passed), f"{detail} ({self.elapsed():.1f} s)"))
        return bool(passed)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return _Recorder(marker.args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        status = "PASS" if all(p for p, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  " + "; ".join(d for _, d in parts))
