import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# acceptance tests append (criterion, ok, detail) here; the terminal summary
# prints one line per criterion after the run
CRITERION_LINES = []


def _status(ok):
    if ok is None:
        return "SKIP"
    return "PASS" if ok else "FAIL"


def record_criterion(number, ok, detail):
    CRITERION_LINES.append((number, ok, detail))
    line = "CRITERION %d: %s — %s" % (number, _status(ok), detail)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(CRITERION_LINES):
        terminalreporter.write_line(
            "CRITERION %d: %s — %s" % (number, _status(ok), detail)
        )


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture
def small_spec():
    from ordcfa import build_model_spec

    return build_model_spec(
        {"a": 3, "b": 4, "c": 5}, {"f": ["a", "b", "c"]}
    )


@pytest.fixture
def two_factor_spec():
    from ordcfa import build_model_spec

    items = {"x%d" % j: 4 for j in range(6)}
    return build_model_spec(
        items,
        {"f1": ["x0", "x1", "x2"], "f2": ["x3", "x4", "x5"]},
    )
