"""Named parameter sets used by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .et import EtApparatusState
from .numerics import GridSpec
from .phase_space import AkParams, ApparatusWindow1D
from .states import GaussianPacket

__all__ = ["Preset", "PRESETS", "get_preset", "FIGURE1_TIMES", "FIGURE1_GRID"]

# Reference times of the two arrival-time curves and the arrival-instant axis of the figure.
FIGURE1_TIMES = (-0.2, -0.1)
FIGURE1_GRID = GridSpec(-1.5, 1.5, 601)


@dataclass(frozen=True)
class Preset:
    name: str
    params: AkParams
    et_apparatus: EtApparatusState
    description: str

    @property
    def state(self) -> GaussianPacket:
        return self.params.packet

    @property
    def window(self) -> ApparatusWindow1D:
        return self.params.window


PRESETS = {
    "figure1": Preset(
        "figure1",
        AkParams(x0=-2.5, k0=10.0, delta=0.1, sigma=0.1),
        EtApparatusState(1.0, 1.0),
        "packet and window of the reference figure: x0=-2.5, k0=10, delta=sigma=0.1",
    ),
    # Zero mean momentum: equal weight on both momentum signs, so the arrival
    # density built from the current shows one bump on each side of T = 0.
    "figure1-symmetric": Preset(
        "figure1-symmetric",
        AkParams(x0=-2.5, k0=0.0, delta=0.1, sigma=0.1),
        EtApparatusState(1.0, 1.0),
        "figure1 packet with k0=0 (left/right bumps from negative/positive momenta)",
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError("preset", f"unknown preset {name!r} (choose from {', '.join(PRESETS)})") from None
