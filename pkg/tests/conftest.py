import pytest

from backflash import attack
from backflash.components import (
    PaddleControllerConfig,
    default_backflash_spectrum,
    default_detector_curve,
    default_paddles,
    default_pbs_curves,
)


@pytest.fixture(scope="session")
def bob():
    return PaddleControllerConfig(default_paddles(), attack.default_bob_angles())


@pytest.fixture(scope="session")
def calibration(bob):
    return attack.calibrate(bob)


@pytest.fixture(scope="session")
def eve(calibration):
    return PaddleControllerConfig(default_paddles(), calibration.eve_angles)


@pytest.fixture(scope="session")
def parts():
    """Default spectrum, PBS curves and detector curve."""
    return default_backflash_spectrum(), default_pbs_curves(), default_detector_curve()


_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record and print one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
