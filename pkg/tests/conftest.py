import os

import pytest

from firstexit.engine import DEFAULT_SEED, run_experiment
from firstexit.model import ExponentialScaleModel
from firstexit.reproduce import DESK_REPS, FULL_REPS, experiment

DESK = os.environ.get("FIRSTEXIT_DESK", "") not in ("", "0")
REPS = DESK_REPS if DESK else FULL_REPS

_criteria = []


@pytest.fixture
def q3():
    return ExponentialScaleModel(3.0)


class _SampleCache:
    """Reference-setting samples (q = 3, default seed), simulated once per session."""

    def __init__(self):
        self._cache = {}

    def __call__(self, kind, threshold):
        key = (kind, float(threshold))
        if key not in self._cache:
            self._cache[key] = run_experiment(experiment(kind, threshold, REPS, DEFAULT_SEED))
        return self._cache[key]


@pytest.fixture(scope="session")
def reference_sample():
    return _SampleCache()


@pytest.fixture
def criterion(request):
    """Record a one-line detail for the acceptance summary."""

    def record(text):
        request.node.user_properties.append(("criterion", text))

    return record


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        details = [v for k, v in report.user_properties if k == "criterion"]
        _criteria.append((report.nodeid.split("::")[-1], report.outcome, "; ".join(details)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    scale = f"desk scale, R={REPS}" if DESK else f"R={REPS}"
    terminalreporter.write_sep("=", f"acceptance criteria ({scale})")
    for name, outcome, detail in _criteria:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {name}  {detail}")
