"""Named scattering setups shared by the CLI, the demos and the tests."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .evolution import EvolutionParams
from .lattice import GridSpec, SpinorField2B, WavePacketSpec, init_product_packet, make_grid

HALF = float(np.sqrt(0.5))


@dataclass(frozen=True)
class Setup:
    grid: GridSpec
    photon: WavePacketSpec
    electron: WavePacketSpec
    params: EvolutionParams
    side: str = "photon_left"

    def field(self) -> SpinorField2B:
        return init_product_packet(self.grid, self.photon, self.electron, self.side, self.params.interacting)

    def with_mode(self, mode: str) -> "Setup":
        return replace(self, params=replace(self.params, mode=mode))


def compton(mode: str = "interacting", n: int = 512, dz: float = 0.25) -> Setup:
    """Right-moving photon packet hitting an electron at rest, 32 Compton lengths apart.

    The electron starts in the positive-energy spinor of zero momentum.
    """
    grid = make_grid(n, dz, -n * dz / 2)
    photon = WavePacketSpec(-16.0, 2.0, 1.0, (0.0, 1.0))
    electron = WavePacketSpec(16.0, 2.0, 0.0, (HALF, HALF))
    return Setup(grid, photon, electron, EvolutionParams(m=1.0, theta=0.0, mode=mode))


def four_channel(mode: str = "interacting", n: int = 512, dz: float = 0.25) -> Setup:
    """Both particles in equal chirality mixtures with a light electron.

    Every chirality pair is populated, so the scattered density splits into
    the four channels both-left, both-right, away and bounce.
    """
    grid = make_grid(n, dz, -n * dz / 2)
    photon = WavePacketSpec(-16.0, 2.0, 1.0, (HALF, HALF))
    electron = WavePacketSpec(16.0, 2.0, 0.0, (HALF, HALF))
    return Setup(grid, photon, electron, EvolutionParams(m=0.05, theta=0.0, mode=mode))


PRESETS = {"compton": compton, "four_channel": four_channel}
