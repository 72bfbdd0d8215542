import pytest

from maglev_pid.control import AmplifierModel, design_gains_from_specs, DesignSpecs
from maglev_pid.plant import PlantParams, calibrate_to_current_coefficient, linearize, operating_point
from maglev_pid.sensing import SensorCurve
from maglev_pid.sim import holding_bias


@pytest.fixture
def plant():
    return calibrate_to_current_coefficient(7.5, 3.0, PlantParams())


@pytest.fixture
def op(plant):
    return operating_point(plant, 3.0)


@pytest.fixture
def lm(plant, op):
    return linearize(plant, op)


@pytest.fixture
def curve():
    return SensorCurve()


@pytest.fixture
def amp():
    return AmplifierModel()


@pytest.fixture
def chain(curve, amp):
    return curve.gain * amp.transconductance


@pytest.fixture
def pid_gains(plant, lm, amp, chain):
    return design_gains_from_specs(DesignSpecs(0.7, 150.0), lm, chain,
                                   bias=holding_bias(plant, amp, 3.0))


# acceptance report: one line per criterion, printed after the run
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE[n] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, verdict = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {title}")
