"""Exactly unitary split-step evolution of the two-body spinor field.

One step is ``M(dt/2) T M(dt/2)``: a half mass rotation of the electron
chirality pair, an exact one-cell shift of every component along its
characteristic (``dt == dz``), and another half rotation. The photon is
massless, so only the electron index is rotated.

In interacting mode the shift is modified next to the diagonal. A
component whose shift would land on or jump across the coincidence set
is reflected in place into the receding chirality pair with the boundary
phase ``exp(i theta)``. The resulting transport is a permutation of the
off-diagonal states with unit-modulus weights, so the step is unitary to
rounding and no probability ever crosses the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .lattice import (
    GridSpec,
    SpinorField2B,
    ValidationError,
    _side_sums,
    density,
)

EDGE_ABORT = 1e-6
EDGE_CELLS = 2
MAX_ORACLE_N = 24


class InvariantError(RuntimeError):
    """A lattice invariant (e.g. zero diagonal) was found broken."""


class PhysicsAbort(RuntimeError):
    """A run stopped because its result would no longer be meaningful."""

    def __init__(self, message, diagnostics=None, field=None, snapshots=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
        self.field = field
        self.snapshots = snapshots or []


class EdgeAbort(PhysicsAbort):
    pass


class CausalityError(ValueError):
    """Requested multi-time configuration is not space-like separated."""


@dataclass(frozen=True)
class EvolutionParams:
    m: float = 1.0
    theta: float = 0.0
    mode: Literal["interacting", "free"] = "interacting"
    dt: float | None = None
    boundary: Literal["wall", "periodic"] = "wall"

    def __post_init__(self):
        if not self.m >= 0:
            raise ValidationError(f"mass must be non-negative, got {self.m}")
        if self.mode not in ("interacting", "free"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.boundary not in ("wall", "periodic"):
            raise ValidationError(f"unknown boundary {self.boundary!r}")
        if self.boundary == "periodic" and self.mode == "interacting":
            # a periodic wrap connects the two sides of the coincidence set
            raise ValidationError("periodic boundary is only defined in free mode")
        object.__setattr__(self, "theta", float(self.theta) % (2 * np.pi))

    @property
    def interacting(self) -> bool:
        return self.mode == "interacting"

    def resolved_dt(self, grid: GridSpec) -> float:
        if self.dt is not None and self.dt != grid.dz:
            raise ValidationError(f"dt must equal dz ({grid.dz}), got {self.dt}")
        return grid.dz


@dataclass(frozen=True)
class StepDiagnostics:
    step_index: int
    total_norm: float
    side_norm_left: float
    side_norm_right: float
    edge_norm: float


@dataclass(frozen=True, eq=False)
class TransportMap:
    """Gather form of the transport: ``out.flat[t] = phase[t] * in.flat[src[t]]``.

    Only the entries in ``special`` carry a phase other than one.
    """

    n: int
    src: np.ndarray
    special: np.ndarray
    special_phase: np.ndarray
    n_reflections: int = field(default=0)


def _forward_transport(n, interacting, theta, periodic):
    A, B, I, J = np.indices((2, 2, n, n))
    ti = I + 2 * A - 1
    tj = J + 2 * B - 1
    tA = A.copy()
    tB = B.copy()
    phase = np.ones(A.shape, dtype=complex)
    if periodic:
        ti %= n
        tj %= n
    else:
        # hard wall: the departing particle flips chirality and stays put
        out = (ti < 0) | (ti >= n)
        ti[out] = I[out]
        tA[out] = 1 - A[out]
        out = (tj < 0) | (tj >= n)
        tj[out] = J[out]
        tB[out] = 1 - B[out]
    src_ok = np.ones(A.shape, dtype=bool)
    n_refl = 0
    if interacting:
        d_src = I - J
        d_tgt = ti - tj
        src_ok = d_src != 0
        bad = src_ok & ((d_tgt == 0) | (np.sign(d_tgt) != np.sign(d_src)))
        ti[bad] = I[bad]
        tj[bad] = J[bad]
        tA[bad] = 1 - A[bad]
        tB[bad] = 1 - B[bad]
        refl = bad & (A != B)
        phase[refl] = np.exp(1j * theta)
        n_refl = int(refl.sum())
    src = np.ravel_multi_index((A, B, I, J), A.shape)[src_ok]
    tgt = np.ravel_multi_index((tA, tB, ti, tj), A.shape)[src_ok]
    return src, tgt, phase[src_ok], n_refl


@lru_cache(maxsize=16)
def transport_map(n: int, interacting: bool, theta: float, periodic: bool = False) -> TransportMap:
    src, tgt, phase, n_refl = _forward_transport(n, interacting, theta, periodic)
    size = 4 * n * n
    if np.unique(tgt).size != tgt.size or (
        interacting and np.any(np.isin(tgt, _diagonal_states(n)))
    ):
        raise InvariantError("transport is not a bijection of the configuration domain")
    gather = np.arange(size, dtype=np.intp)
    gather[tgt] = src
    full_phase = np.zeros(size, dtype=complex)
    full_phase[tgt] = phase
    special = np.flatnonzero(full_phase != 1.0)
    return TransportMap(n, gather, special, full_phase[special], n_refl)


def _diagonal_states(n):
    A, B, k = np.meshgrid([0, 1], [0, 1], np.arange(n), indexing="ij")
    return np.ravel_multi_index((A, B, k, k), (2, 2, n, n)).ravel()


def domain_states(grid: GridSpec, interacting: bool) -> np.ndarray:
    """Flat indices of the states belonging to the configuration domain."""
    all_states = np.arange(4 * grid.n**2)
    if not interacting:
        return all_states
    return np.setdiff1d(all_states, _diagonal_states(grid.n))


def _rotate(comp: np.ndarray, alpha: float) -> None:
    if alpha == 0.0:
        return
    c, s = np.cos(alpha), np.sin(alpha)
    u = comp[:, 0].copy()
    v = comp[:, 1]
    comp[:, 0] *= c
    comp[:, 0] -= 1j * s * v
    v *= c
    v -= 1j * s * u


def mass_rotation(field: SpinorField2B, m: float, dt_fraction: float) -> SpinorField2B:
    """Apply ``exp(-i m dt_fraction sigma_x)`` to every electron chirality pair."""
    comp = np.array(field.comp)
    _rotate(comp, m * dt_fraction)
    return SpinorField2B.adopt(field.grid, comp, field.interacting)


def _check_diagonal(field: SpinorField2B) -> None:
    n = field.grid.n
    k = np.arange(n)
    if np.any(field.comp[:, :, k, k] != 0):
        raise InvariantError("nonzero amplitude on the coincidence set in interacting mode")


def _apply_transport(comp: np.ndarray, tmap: TransportMap) -> np.ndarray:
    out = comp.reshape(-1)[tmap.src]
    out[tmap.special] *= tmap.special_phase
    return out.reshape(comp.shape)


def transport_step(field: SpinorField2B, params: EvolutionParams) -> SpinorField2B:
    if params.interacting != field.interacting:
        raise ValidationError("field and params disagree on the interaction mode")
    params.resolved_dt(field.grid)
    if params.interacting:
        _check_diagonal(field)
    tmap = transport_map(field.grid.n, params.interacting, params.theta, params.boundary == "periodic")
    return SpinorField2B.adopt(field.grid, _apply_transport(field.comp, tmap), field.interacting)


def _edge_mask(n):
    mask = np.zeros((n, n), dtype=bool)
    mask[:EDGE_CELLS, :] = mask[-EDGE_CELLS:, :] = True
    mask[:, :EDGE_CELLS] = mask[:, -EDGE_CELLS:] = True
    return mask


def diagnose(field: SpinorField2B, step_index: int = 0) -> StepDiagnostics:
    rho = density(field)
    dz2 = field.grid.dz**2
    right, left = _side_sums(rho, field.grid.dz)
    return StepDiagnostics(
        step_index=step_index,
        total_norm=float(np.sum(rho) * dz2),
        side_norm_left=left,
        side_norm_right=right,
        edge_norm=float(np.sum(rho[_edge_mask(field.grid.n)]) * dz2),
    )


class Stepper:
    """Precomputed one-step propagator for a fixed grid and parameter set."""

    def __init__(self, grid: GridSpec, params: EvolutionParams):
        self.grid = grid
        self.params = params
        self.dt = params.resolved_dt(grid)
        self.half_alpha = params.m * self.dt / 2
        self.tmap = transport_map(grid.n, params.interacting, params.theta, params.boundary == "periodic")

    def advance(self, field: SpinorField2B) -> SpinorField2B:
        if field.grid != self.grid or field.interacting != self.params.interacting:
            raise ValidationError("field does not match the stepper's grid or mode")
        if self.params.interacting:
            _check_diagonal(field)
        comp = np.array(field.comp)
        _rotate(comp, self.half_alpha)
        comp = _apply_transport(comp, self.tmap)
        _rotate(comp, self.half_alpha)
        return SpinorField2B.adopt(self.grid, comp, field.interacting)


def step(field: SpinorField2B, params: EvolutionParams, step_index: int = 1):
    """One Strang step; returns the new field and its diagnostics."""
    new = Stepper(field.grid, params).advance(field)
    return new, diagnose(new, step_index)


def evolve(
    field: SpinorField2B,
    params: EvolutionParams,
    n_steps: int,
    snapshot_stride: int = 0,
    edge_tol: float | None = EDGE_ABORT,
    callback=None,
):
    """Repeat ``step`` ``n_steps`` times.

    Density snapshots are taken at step 0 and every ``snapshot_stride``
    steps (no snapshots when the stride is 0). ``callback(prev, new, k)``
    runs after every step. Raises :class:`EdgeAbort` once the norm within
    two cells of the walls exceeds ``edge_tol``; pass ``None`` to let the
    packet reflect off the hard walls.
    """
    if n_steps < 0:
        raise ValidationError("n_steps must be >= 0")
    stepper = Stepper(field.grid, params)
    diags: list[StepDiagnostics] = []
    snaps: list[tuple[int, np.ndarray]] = []
    if snapshot_stride:
        snaps.append((0, density(field)))
    for k in range(1, n_steps + 1):
        new = stepper.advance(field)
        diag = diagnose(new, k)
        diags.append(diag)
        if not np.isfinite(diag.total_norm):
            raise PhysicsAbort(f"non-finite field at step {k}", diags, field, snaps)
        if edge_tol is not None and diag.edge_norm > edge_tol:
            raise EdgeAbort(
                f"packet reached the outer wall at step {k} (edge norm {diag.edge_norm:.3g})",
                diags,
                new,
                snaps,
            )
        if callback is not None:
            callback(field, new, k)
        field = new
        if snapshot_stride and k % snapshot_stride == 0:
            snaps.append((k, density(field)))
    return field, diags, snaps


def one_step_matrix(params: EvolutionParams, small_grid: GridSpec) -> np.ndarray:
    """Dense one-step map on the configuration domain, built column by column.

    Rows and columns follow :func:`domain_states`.
    """
    n = small_grid.n
    if n > MAX_ORACLE_N:
        raise ValidationError(f"one_step_matrix is limited to n <= {MAX_ORACLE_N}, got {n}")
    states = domain_states(small_grid, params.interacting)
    stepper = Stepper(small_grid, params)
    mat = np.zeros((states.size, states.size), dtype=complex)
    for col, s in enumerate(states):
        basis = np.zeros(4 * n * n, dtype=complex)
        basis[s] = 1.0
        f = SpinorField2B(small_grid, basis.reshape(2, 2, n, n), params.interacting)
        mat[:, col] = stepper.advance(f).comp.reshape(-1)[states]
    return mat


def _bilinear(arr: np.ndarray, x: float, y: float) -> complex:
    n0, n1 = arr.shape
    i0 = int(np.clip(np.floor(x), 0, n0 - 2))
    j0 = int(np.clip(np.floor(y), 0, n1 - 2))
    fx, fy = x - i0, y - j0
    return (
        arr[i0, j0] * (1 - fx) * (1 - fy)
        + arr[i0 + 1, j0] * fx * (1 - fy)
        + arr[i0, j0 + 1] * (1 - fx) * fy
        + arr[i0 + 1, j0 + 1] * fx * fy
    )


def multi_time_extend(field: SpinorField2B, tau: float, point: tuple[float, float]) -> np.ndarray:
    """Amplitudes at photon time ``t + tau`` and electron time ``t``.

    The photon is massless, so away from the coincidence set each photon
    chirality is carried unchanged along its characteristic. Returns a
    ``(2, 2)`` array indexed like ``comp``.
    """
    if tau < 0:
        raise ValidationError("tau must be non-negative")
    z_ph, z_el = map(float, point)
    if not abs(z_ph - z_el) > tau:
        raise CausalityError(
            f"events must be space-like separated: |z_ph - z_el| = {abs(z_ph - z_el):g} <= tau = {tau:g}"
        )
    grid = field.grid
    lo, hi = grid.z[0], grid.z[-1]
    out = np.zeros((2, 2), dtype=complex)
    for A, a in enumerate((-1, 1)):
        zs = z_ph - a * tau
        for z in (zs, z_el):
            if not lo <= z <= hi:
                raise ValidationError(f"point {z:g} lies outside the grid")
        x = float(grid.index_of(zs))
        y = float(grid.index_of(z_el))
        for B in range(2):
            out[A, B] = _bilinear(field.comp[A, B], x, y)
    return out


def multi_time_slice(field: SpinorField2B, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Density of the extended wave function at every grid configuration.

    Returns ``(rho, valid)``; ``valid`` marks configurations that are
    space-like for the given ``tau`` and whose characteristic source lies
    inside the grid. ``rho`` is zero elsewhere.
    """
    if tau < 0:
        raise ValidationError("tau must be non-negative")
    grid = field.grid
    n = grid.n
    z = grid.z
    shift = tau / grid.dz
    rho = np.zeros((n, n))
    valid = np.abs(z[:, None] - z[None, :]) > tau
    x = np.arange(n, dtype=float)
    for A, a in enumerate((-1, 1)):
        xs = x - a * shift
        inside = (xs >= 0) & (xs <= n - 1)
        valid &= inside[:, None]
        i0 = np.clip(np.floor(xs).astype(int), 0, n - 2)
        fx = (xs - i0)[:, None]
        for B in range(2):
            c = field.comp[A, B]
            vals = c[i0, :] * (1 - fx) + c[i0 + 1, :] * fx
            rho += np.abs(vals) ** 2
    rho[~valid] = 0.0
    return rho, valid
