"""Configuration grids, two-body spinor fields and density observables.

Units are natural (hbar = c = 1) with lengths in electron Compton
wavelengths. Both particles live on the same square grid so the
coincidence set is exactly the lattice diagonal ``i == j``.

Spinor components are stored in one array ``comp`` of shape
``(2, 2, n, n)``: the first axis is the photon chirality, the second the
electron chirality (index 0 is the left-mover ``-1``, index 1 the
right-mover ``+1``), then photon cell ``i`` and electron cell ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

CHIRALITIES = (-1, +1)
EDGE_TOL = 1e-8


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


def chirality_index(a: int) -> int:
    if a not in CHIRALITIES:
        raise ValidationError(f"chirality must be -1 or +1, got {a!r}")
    return (a + 1) // 2


@dataclass(frozen=True)
class GridSpec:
    n: int
    dz: float
    origin: float

    @property
    def z(self) -> np.ndarray:
        return self.origin + self.dz * np.arange(self.n)

    @property
    def length(self) -> float:
        return self.n * self.dz

    def index_of(self, z):
        """Fractional cell index of coordinate ``z``."""
        return (np.asarray(z, dtype=float) - self.origin) / self.dz


def make_grid(n: int, dz: float, origin: float = 0.0) -> GridSpec:
    if int(n) != n or n < 8:
        raise ValidationError(f"grid needs n >= 8 cells, got {n}")
    if not dz > 0:
        raise ValidationError(f"dz must be positive, got {dz}")
    return GridSpec(int(n), float(dz), float(origin))


@dataclass(frozen=True)
class WavePacketSpec:
    center: float
    width: float
    wavenumber: float = 0.0
    chirality_weights: tuple[complex, complex] = (0.0, 1.0)

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError(f"packet width must be positive, got {self.width}")
        w = np.asarray(self.chirality_weights, dtype=complex)
        if w.shape != (2,):
            raise ValidationError("chirality_weights must be a pair (w_minus, w_plus)")
        if abs(np.sum(np.abs(w) ** 2) - 1.0) > 1e-12:
            raise ValidationError("chirality weights must satisfy |w-|^2 + |w+|^2 = 1")

    def profile(self, z: np.ndarray) -> np.ndarray:
        return np.exp(-((z - self.center) ** 2) / (4 * self.width**2)) * np.exp(
            1j * self.wavenumber * z
        )


@dataclass(frozen=True, eq=False)
class SpinorField2B:
    """Two-body wave function on an equal-time slice.

    In interacting mode the diagonal cells are outside the configuration
    domain and carry zero amplitude.
    """

    grid: GridSpec
    comp: np.ndarray
    interacting: bool = True

    def __post_init__(self):
        n = self.grid.n
        comp = np.asarray(self.comp, dtype=np.complex128)
        if comp.shape != (2, 2, n, n):
            raise ValidationError(f"comp must have shape (2, 2, {n}, {n}), got {comp.shape}")
        if comp.flags.writeable:
            comp = comp.copy()
            comp.flags.writeable = False
        object.__setattr__(self, "comp", comp)

    def component(self, a: int, b: int) -> np.ndarray:
        return self.comp[chirality_index(a), chirality_index(b)]

    def with_comp(self, comp: np.ndarray) -> "SpinorField2B":
        return SpinorField2B(self.grid, comp, self.interacting)

    @classmethod
    def adopt(cls, grid: GridSpec, comp: np.ndarray, interacting: bool) -> "SpinorField2B":
        """Wrap a freshly computed array without copying it."""
        comp.flags.writeable = False
        return cls(grid, comp, interacting)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.comp)))


def zero_field(grid: GridSpec, interacting: bool = True) -> SpinorField2B:
    return SpinorField2B(grid, np.zeros((2, 2, grid.n, grid.n), complex), interacting)


def diagonal_offset(n: int) -> np.ndarray:
    """Array of ``i - j`` over the configuration grid."""
    idx = np.arange(n)
    return idx[:, None] - idx[None, :]


def init_product_packet(
    grid: GridSpec,
    ph: WavePacketSpec,
    el: WavePacketSpec,
    side: Literal["photon_left", "photon_right"] = "photon_left",
    interacting: bool = True,
) -> SpinorField2B:
    """Normalized product of two Gaussian packets on one side of the diagonal."""
    if side not in ("photon_left", "photon_right"):
        raise ValidationError(f"unknown side {side!r}")
    gap = el.center - ph.center if side == "photon_left" else ph.center - el.center
    if gap <= 0:
        raise ValidationError(f"packet centers are not on the {side} side of the diagonal")
    if gap < 5 * (ph.width + el.width):
        raise ValidationError(
            f"packets too close: separation {gap:g} < 5*(sum of widths) = "
            f"{5 * (ph.width + el.width):g}"
        )
    z = grid.z
    g_ph = ph.profile(z)
    g_el = el.profile(z)
    for name, g in (("photon", g_ph), ("electron", g_el)):
        peak = np.max(np.abs(g))
        if max(abs(g[0]), abs(g[-1])) > EDGE_TOL * peak:
            raise ValidationError(f"{name} packet overflows the grid edge")

    w_ph = np.asarray(ph.chirality_weights, dtype=complex)
    w_el = np.asarray(el.chirality_weights, dtype=complex)
    comp = np.einsum("a,b,i,j->abij", w_ph, w_el, g_ph, g_el)
    d = diagonal_offset(grid.n)
    keep = d < 0 if side == "photon_left" else d > 0
    comp *= keep
    norm = np.sum(np.abs(comp) ** 2) * grid.dz**2
    comp /= np.sqrt(norm)
    return SpinorField2B(grid, comp, interacting)


def density(field: SpinorField2B) -> np.ndarray:
    rho = np.sum(field.comp.real**2 + field.comp.imag**2, axis=(0, 1))
    return rho


def total_norm(field: SpinorField2B) -> float:
    return float(np.sum(density(field)) * field.grid.dz**2)


def side_norms(field: SpinorField2B) -> tuple[float, float]:
    """Norms on the two sides of the diagonal.

    Returns ``(sum over i > j, sum over i < j)``, i.e. the photon-right
    sector first and the photon-left sector second.
    """
    rho = density(field)
    return _side_sums(rho, field.grid.dz)


def _side_sums(rho: np.ndarray, dz: float) -> tuple[float, float]:
    upper = np.triu(rho, 1)  # j > i: photon left
    lower = np.tril(rho, -1)  # i > j: photon right
    return float(np.sum(lower) * dz**2), float(np.sum(upper) * dz**2)


def marginal_density(field: SpinorField2B, which: Literal["photon", "electron"]) -> np.ndarray:
    rho = density(field)
    if which == "photon":
        return rho.sum(axis=1) * field.grid.dz
    if which == "electron":
        return rho.sum(axis=0) * field.grid.dz
    raise ValidationError(f"which must be 'photon' or 'electron', got {which!r}")
