import math

import numpy as np
import pytest

from logpolymer.environment import WeightField, make_bulk_field


def four_weight_field():
    """Y00=1, Y10=2, Y01=3, Y11=4: Z_{(0,0),(1,1)} = 1*2*4 + 1*3*4 = 20."""
    return WeightField.from_weights((0, 0), np.array([[1.0, 3.0], [2.0, 4.0]]))


def random_field(lo, hi, seed, sigma=1.0, stream=0):
    return make_bulk_field(lo, hi, sigma, seed, stream=stream)


def enumerated_log_z(field, o, p):
    from logpolymer.polymer import enumerate_paths, path_log_weight

    return float(np.logaddexp.reduce([path_log_weight(field, q) for q in enumerate_paths(o, p)]))


def freq_within(count, n, p, k=4.0):
    se = math.sqrt(p * (1 - p) / n)
    return abs(count / n - p) <= k * se


@pytest.fixture
def unit_field():
    return WeightField.constant((-4, -4), (4, 4), 1.0)


# one PASS/FAIL line per acceptance criterion in the terminal summary

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s.split("_")[2])):
        verdict, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{verdict}  {name}  {detail}")
