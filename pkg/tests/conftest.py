import sys

import numpy as np
import pytest

from axialms.chain import compute_modes, reference_trap
from axialms.gate import calibrate_pulse
from axialms.pairs import setup_pair


@pytest.fixture(scope="session")
def high_modes():
    return compute_modes(reference_trap("high"))


@pytest.fixture(scope="session")
def low_modes():
    return compute_modes(reference_trap("low"))


@pytest.fixture(scope="session")
def pair12():
    """Pair (1, 2) on its default mode with the default Walsh/ramp schedule."""
    return setup_pair((1, 2))


@pytest.fixture(scope="session")
def square12(high_modes):
    """Square K = 2, 120 us pulse on mode 2 for pair (1, 2)."""
    ej, ek = high_modes.eta(1, 2), high_modes.eta(2, 2)
    return calibrate_pulse(120e-6, 2, ej, ek, np.pi / 2, target_pair=(1, 2), target_mode=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
