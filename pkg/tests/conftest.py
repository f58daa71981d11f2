import numpy as np
import pytest

from pswa.numerics import set_debug_checks, set_default_dtype


@pytest.fixture(autouse=True)
def _reset_numerics_state():
    set_default_dtype("f64")
    set_debug_checks(True)
    yield
    set_default_dtype("f64")
    set_debug_checks(True)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    # One explicit verdict line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[{name}] {'PASS' if report.passed else 'FAIL'}")
