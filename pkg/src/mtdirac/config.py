"""JSON run configuration.

Unknown keys are rejected and the physical preconditions of the lattice
and Klein-Gordon pipelines are re-checked when a config is built, so a
config that parses is one that can run.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import lattice
from .evolution import EvolutionParams
from .lattice import GridSpec, WavePacketSpec
from .liq import LiqConfig
from .presets import HALF, Setup

COMMANDS = ("evolve", "pair-trajectories", "ensemble", "multitime-slice", "liq-scaling", "liq-witness")
Command = Literal["evolve", "pair-trajectories", "ensemble", "multitime-slice", "liq-scaling", "liq-witness"]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridBlock(_Block):
    n: int = 512
    dz: float = 0.25
    origin: float = -64.0


class ParamsBlock(_Block):
    m: float = Field(1.0, ge=0)
    theta: float = 0.0
    mode: Literal["interacting", "free"] = "interacting"


class PacketBlock(_Block):
    center: float
    width: float = Field(2.0, gt=0)
    wavenumber: float = 0.0
    chirality_weights: tuple[float, float] = (0.0, 1.0)

    def spec(self) -> WavePacketSpec:
        return WavePacketSpec(self.center, self.width, self.wavenumber, self.chirality_weights)


class PacketsBlock(_Block):
    photon: PacketBlock = PacketBlock(center=-16.0, wavenumber=1.0, chirality_weights=(0.0, 1.0))
    electron: PacketBlock = PacketBlock(center=16.0, chirality_weights=(HALF, HALF))
    side: Literal["photon_left", "photon_right"] = "photon_left"


class RunBlock(_Block):
    n_steps: int = Field(200, ge=0)
    snapshot_stride: int = Field(0, ge=0)
    edge_tol: Optional[float] = Field(1e-6, gt=0)
    tau: float = Field(0.5, ge=0)
    workers: int = Field(1, ge=1)


class EnsembleBlock(_Block):
    n_samples: int = Field(100, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    bins: int = Field(16, ge=1)
    d_capture: float = Field(1.0, gt=0)
    tau_capture: float = Field(5.0, ge=0)
    null_reps: int = Field(1000, ge=1)
    separations: Optional[list[float]] = None


class LiqBlock(_Block):
    hbar_list: list[float] = [0.2, 0.1, 0.05, 0.025]
    m: float = 1.0
    V0: float = 0.5
    w: float = Field(2.0, gt=0)
    sigma: float = Field(1.0, gt=0)
    length: float = Field(24.0, gt=0)
    T: float = Field(0.5, gt=0)
    dq_per_hbar: float = Field(0.2, gt=0)
    dt_per_hbar2: float = Field(0.02, gt=0)
    branch_sign: Literal[-1, 1] = -1
    refine_continuity: bool = True
    hbar: float = Field(0.1, gt=0)
    witness_dq: float = Field(0.05, gt=0)

    def liq_config(self) -> LiqConfig:
        return LiqConfig(
            m=self.m, V0=self.V0, w=self.w, sigma=self.sigma, length=self.length, T=self.T,
            dq_per_hbar=self.dq_per_hbar, dt_per_hbar2=self.dt_per_hbar2, branch_sign=self.branch_sign,
        )


class OutputBlock(_Block):
    directory: str = "out"
    formats: list[Literal["pgm", "csv"]] = ["pgm", "csv"]


LATTICE_COMMANDS = ("evolve", "pair-trajectories", "ensemble", "multitime-slice")


class RunConfig(_Block):
    command: Command
    grid: GridBlock = GridBlock()
    params: ParamsBlock = ParamsBlock()
    packets: PacketsBlock = PacketsBlock()
    run: RunBlock = RunBlock()
    ensemble: EnsembleBlock = EnsembleBlock()
    liq: LiqBlock = LiqBlock()
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _physics(self):
        if self.command in LATTICE_COMMANDS:
            setup = self.setup()
            setup.field()  # packet placement, overlap and edge checks
            if self.command == "ensemble" and setup.grid.n % self.ensemble.bins:
                raise ValueError(f"ensemble.bins = {self.ensemble.bins} must divide grid.n = {self.grid.n}")
        elif self.command == "liq-scaling":
            hb = sorted(self.liq.hbar_list)
            if len(hb) < 4 or hb[0] <= 0 or hb[-1] / hb[0] < 8 - 1e-12:
                raise ValueError("liq.hbar_list needs >= 4 positive values spanning a factor >= 8")
            self.liq.liq_config()
        elif self.command == "liq-witness":
            if not self.liq.m > 0:
                raise ValueError("liq-witness needs liq.m > 0")
        return self

    def setup(self) -> Setup:
        grid = lattice.make_grid(self.grid.n, self.grid.dz, self.grid.origin)
        params = EvolutionParams(m=self.params.m, theta=self.params.theta, mode=self.params.mode)
        return Setup(grid, self.packets.photon.spec(), self.packets.electron.spec(), params, self.packets.side)

    def grid_spec(self) -> GridSpec:
        return lattice.make_grid(self.grid.n, self.grid.dz, self.grid.origin)

    def embedded(self) -> dict:
        """The config as recorded in outputs.

        Where outputs go and how many threads produced them do not change
        any result, so they are left out to keep outputs byte-identical.
        """
        return self.model_dump(mode="json", exclude={"run": {"workers"}, "output": {"directory"}})


def load_config(path: str | Path, command: str | None = None, seed: int | None = None, out: str | None = None) -> RunConfig:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    if command is not None:
        if raw.setdefault("command", command) != command:
            raise ValueError(f"config is for command {raw['command']!r}, not {command!r}")
    if seed is not None:
        raw.setdefault("ensemble", {})["seed"] = seed
    if out is not None:
        raw.setdefault("output", {})["directory"] = out
    return RunConfig.model_validate(raw)
