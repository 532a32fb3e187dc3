import numpy as np
import pytest

from toa_lab.phase_space import AkParams
from toa_lab.presets import get_preset
from toa_lab.states import GaussianPacket

# One line per acceptance criterion, echoed again in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"AC{criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def figure1() -> AkParams:
    return get_preset("figure1").params


@pytest.fixture
def packet() -> GaussianPacket:
    # Mild packet: quick to integrate, still carries a little negative momentum.
    return GaussianPacket(-2.5, 3.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
