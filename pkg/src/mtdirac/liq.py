"""Klein-Gordon evolution and its Madelung (amplitude/phase) reading in one
space dimension.

The wave equation is ``(-i hbar d_t + V)^2 psi = -hbar^2 d_q^2 psi + m^2 psi``
with a static potential ``V(q)``. Writing ``psi = sqrt(rho) exp(i S/hbar)``
splits it into the exact phase equation

    (d_t S + V)^2 - (d_q S)^2 - m^2 = hbar^2 (d_t^2 - d_q^2) sqrt(rho) / sqrt(rho)

and the current conservation law ``d_t(rho u0) - d_q(rho u1) = 0`` with
``u0 = d_t S + V`` and ``u1 = d_q S``. Positive-frequency modes
``exp(-i w t / hbar)`` have ``u0 < 0`` in this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .lattice import ValidationError

VALID_FLOOR = 1e-12


class KGBlowup(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite Klein-Gordon field at step {step}")
        self.step = step


class CausticError(RuntimeError):
    """The valid region of a Madelung slice split into several pieces."""


@dataclass(frozen=True)
class Grid1D:
    n_q: int
    dq: float
    origin: float = 0.0
    periodic: bool = True

    def __post_init__(self):
        if int(self.n_q) != self.n_q or self.n_q < 8:
            raise ValidationError("Grid1D needs n_q >= 8")
        if not self.dq > 0:
            raise ValidationError("dq must be positive")
        if not self.periodic:
            raise ValidationError("only periodic grids are supported")

    @property
    def q(self) -> np.ndarray:
        return self.origin + self.dq * np.arange(self.n_q)

    @property
    def length(self) -> float:
        return self.n_q * self.dq


def centered_grid(length: float, dq: float) -> Grid1D:
    n = int(round(length / dq))
    return Grid1D(n, dq, -n * dq / 2)


@dataclass(frozen=True, eq=False)
class KGState:
    psi: np.ndarray
    psi_dot: np.ndarray
    hbar: float
    m: float
    V: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValidationError("hbar must be positive")
        if self.m < 0:
            raise ValidationError("mass must be non-negative")
        for name in ("psi", "psi_dot"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} is not finite")
            object.__setattr__(self, name, arr)
        V = np.broadcast_to(np.asarray(self.V, dtype=float), self.psi.shape)
        object.__setattr__(self, "V", V)


def bump_potential(q: np.ndarray, V0: float, w: float) -> np.ndarray:
    return V0 * np.exp(-(q**2) / (2 * w**2))


def _laplacian(psi: np.ndarray, dq: float) -> np.ndarray:
    return (np.roll(psi, -1) + np.roll(psi, 1) - 2 * psi) / dq**2


def solve_kg(grid: Grid1D, V, hbar: float, m: float, init: KGState, n_steps: int, dt: float, stride: int = 1) -> list[KGState]:
    """Leapfrog evolution; returns every ``stride``-th state including the first.

    The three-level recurrence is

        psi+ (1 + a) = 2 psi - psi- (1 - a) + dt^2 (L + c) psi

    with ``a = i V dt / hbar``, ``c = (V^2 - m^2) / hbar^2`` and ``L`` the
    centered periodic Laplacian. ``psi_dot`` of each state is the centered
    difference of its neighbours, and the start uses the same centered
    relation with the given ``init.psi_dot``.
    """
    if not 0 < dt <= grid.dq:
        raise ValidationError(f"CFL violated: need 0 < dt <= dq, got dt={dt}, dq={grid.dq}")
    if n_steps < 0 or stride < 1:
        raise ValidationError("n_steps must be >= 0 and stride >= 1")
    if init.psi.shape != (grid.n_q,):
        raise ValidationError("initial state does not match the grid")
    if n_steps == 0:
        return [init]
    V = np.broadcast_to(np.asarray(V, dtype=float), (grid.n_q,))
    a = 1j * V * dt / hbar
    c = (V**2 - m**2) / hbar**2
    dq = grid.dq

    def force(psi):
        return dt**2 * (_laplacian(psi, dq) + c * psi)

    prev = init.psi
    cur = 0.5 * (2 * prev + force(prev)) + dt * init.psi_dot * (1 - a)
    out = [init]
    for k in range(1, n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # reported as KGBlowup
            nxt = (2 * cur - prev * (1 - a) + force(cur)) / (1 + a)
        if not np.all(np.isfinite(nxt)):
            raise KGBlowup(k)
        if k % stride == 0:
            out.append(KGState(cur, (nxt - prev) / (2 * dt), hbar, m, V, init.t + k * dt))
        prev, cur = cur, nxt
    return out


@dataclass(frozen=True, eq=False)
class MadelungPair:
    rho: np.ndarray
    s_tilde: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    valid_mask: np.ndarray
    hbar: float
    dq: float
    t: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    def current(self):
        """``(rho u0, rho u1)``, zero outside the valid mask."""
        j0 = np.where(self.valid_mask, self.rho * np.nan_to_num(self.u0), 0.0)
        j1 = np.where(self.valid_mask, self.rho * np.nan_to_num(self.u1), 0.0)
        return j0, j1


def madelung(state: KGState, dq: float) -> MadelungPair:
    psi = state.psi
    hbar = state.hbar
    rho = np.abs(psi) ** 2
    top = rho.max()
    if not top > 0:
        raise ValidationError("cannot decompose a vanishing field")
    valid = rho > VALID_FLOOR * top
    n = psi.size
    # phase increments between neighbours, wrapped to (-pi, pi]
    dphi = np.angle(np.roll(psi, -1) * np.conj(psi))  # cell i -> i+1
    i0 = int(np.argmax(rho))
    phase = np.full(n, np.nan)
    phase[i0] = np.angle(psi[i0])
    for i in range(i0 + 1, n):
        if not (valid[i] and valid[i - 1]):
            break
        phase[i] = phase[i - 1] + dphi[i - 1]
    for i in range(i0 - 1, -1, -1):
        if not (valid[i] and valid[i + 1]):
            break
        phase[i] = phase[i + 1] - dphi[i]
    s_tilde = hbar * phase
    u1 = hbar * np.angle(np.roll(psi, -1) * np.conj(np.roll(psi, 1))) / (2 * dq)
    nb_ok = valid & np.roll(valid, 1) & np.roll(valid, -1)
    u1 = np.where(nb_ok, u1, np.nan)
    safe = np.where(valid, rho, 1.0)
    u0 = np.where(valid, hbar * np.imag(state.psi_dot * np.conj(psi)) / safe + state.V, np.nan)
    return MadelungPair(rho, s_tilde, u0, u1, valid, hbar, dq, state.t)


def hj_residual(pair: MadelungPair, m: float) -> np.ndarray:
    return pair.u0**2 - pair.u1**2 - m**2


def _check_triple(slices):
    if len(slices) < 3:
        raise ValidationError("need three consecutive slices")
    a, b, c = slices[-3:]
    dt1, dt2 = b.t - a.t, c.t - b.t
    if not (dt1 > 0 and abs(dt1 - dt2) <= 1e-9 * dt1):
        raise ValidationError("slices must be equally spaced in time")
    return a, b, c, dt1


def quantum_correction(slices: Sequence[MadelungPair], hbar: float | None = None) -> np.ndarray:
    """``hbar^2 (d_t^2 - d_q^2) sqrt(rho) / sqrt(rho)`` at the middle slice."""
    a, b, c, dt = _check_triple(slices)
    hbar = b.hbar if hbar is None else hbar
    ra, rb, rc = (np.sqrt(s.rho) for s in (a, b, c))
    dtt = (ra - 2 * rb + rc) / dt**2
    dqq = _laplacian(rb, b.dq)
    valid = a.valid_mask & b.valid_mask & c.valid_mask
    safe = np.where(valid, rb, 1.0)
    return np.where(valid, hbar**2 * (dtt - dqq) / safe, np.nan)


def continuity_residual(slices: Sequence[MadelungPair]) -> np.ndarray:
    """``d_t(rho u0) - d_q(rho u1)`` at the middle slice, centered differences."""
    a, b, c, dt = _check_triple(slices)
    j0a, _ = a.current()
    j0c, _ = c.current()
    _, j1b = b.current()
    return (j0c - j0a) / (2 * dt) - (np.roll(j1b, -1) - np.roll(j1b, 1)) / (2 * b.dq)


def weighted_rms(values: np.ndarray, rho: np.ndarray) -> float:
    """Density-weighted RMS over the finite entries."""
    ok = np.isfinite(values)
    w = rho[ok]
    return float(np.sqrt(np.sum(w * values[ok] ** 2) / np.sum(w)))


def l2_norm(values: np.ndarray, dq: float) -> float:
    v = np.nan_to_num(values)
    return float(np.sqrt(np.sum(v**2) * dq))


def is_connected(mask: np.ndarray) -> bool:
    """Whether the mask is a single periodic run of cells."""
    _, n = ndimage.label(mask)
    if n <= 1:
        return True
    return n == 2 and mask[0] and mask[-1]


# ---------------------------------------------------------------- WKB family


@dataclass(frozen=True)
class LiqConfig:
    m: float = 1.0
    V0: float = 0.5
    w: float = 2.0
    sigma: float | None = 1.0  # None: uniform amplitude (plane wave)
    q0: float = 0.0
    p0: float = 0.0
    length: float = 24.0
    T: float = 0.5
    dq_per_hbar: float = 0.2
    dt_per_hbar2: float = 0.02
    branch_sign: int = -1

    def __post_init__(self):
        if self.branch_sign not in (-1, 1):
            raise ValidationError("branch_sign must be -1 or +1")
        if self.m < 0 or (self.sigma is not None and not self.sigma > 0) or not self.w > 0 or not self.T > 0:
            raise ValidationError("invalid WKB configuration")

    def resolution(self, hbar: float, refine: int = 1):
        dq = self.dq_per_hbar * hbar / refine
        dt = min(self.dt_per_hbar2 * hbar**2, dq) / refine
        return dq, dt


def _omega_apply(psi: np.ndarray, grid: Grid1D, m: float, hbar: float, power: float = 1.0) -> np.ndarray:
    """Apply ``(m^2 + p^2)^(power/2)`` with the lattice symbol of ``p^2``."""
    kappa = 2 * np.pi * np.fft.fftfreq(grid.n_q, grid.dq)
    p2 = (2 * hbar / grid.dq * np.sin(kappa * grid.dq / 2)) ** 2
    sym = m**2 + p2
    factor = np.zeros_like(sym)
    pos = sym > 0
    factor[pos] = sym[pos] ** (power / 2)  # pseudo-inverse for power < 0
    return np.fft.ifft(factor * np.fft.fft(psi))


def wkb_state(grid: Grid1D, cfg: LiqConfig, hbar: float) -> KGState:
    """``sqrt(rho0) exp(i S0 / hbar)`` projected onto one frequency branch.

    ``rho0`` is a normalized Gaussian and ``S0 = p0 q``, both fixed across
    ``hbar`` (``sigma=None`` gives a plane wave). The time derivative is ``i hbar psi_dot = (V - b Omega + Y) psi``
    with ``Omega = sqrt(m^2 + p^2)`` and the commutator correction
    ``Y = -Omega^-1 [Omega, V] / 2``, so the other branch is only admixed at
    ``O(hbar^4)``. Its classical reading is ``d_t S = -V + b sqrt(m^2 + (d_q S0)^2)``.
    """
    q = grid.q
    V = bump_potential(q, cfg.V0, cfg.w)
    if cfg.sigma is None:
        rho0 = np.full(q.shape, 1.0 / grid.length)
    else:
        rho0 = np.exp(-((q - cfg.q0) ** 2) / (2 * cfg.sigma**2)) / np.sqrt(2 * np.pi * cfg.sigma**2)
    psi = np.sqrt(rho0) * np.exp(1j * cfg.p0 * q / hbar)
    om = _omega_apply(psi, grid, cfg.m, hbar)
    comm = _omega_apply(V * psi, grid, cfg.m, hbar) - V * om
    y = -0.5 * _omega_apply(comm, grid, cfg.m, hbar, power=-1.0)
    psi_dot = -1j / hbar * (V * psi - cfg.branch_sign * om + y)
    return KGState(psi, psi_dot, hbar, cfg.m, V)


def wkb_run(cfg: LiqConfig, hbar: float, refine: int = 1, n_eval: int = 3):
    """Evolve the WKB data to ``T`` and return the last three Madelung slices."""
    dq, dt = cfg.resolution(hbar, refine)
    grid = centered_grid(cfg.length, dq)
    init = wkb_state(grid, cfg, hbar)
    n_steps = int(round(cfg.T / dt))
    hist = _tail_states(grid, init, n_steps, dt, n_eval)
    return grid, [madelung(s, dq) for s in hist]


def _tail_states(grid, init, n_steps, dt, n_tail):
    """Run :func:`solve_kg` keeping only the final ``n_tail`` states."""
    if n_steps < n_tail:
        raise ValidationError("evaluation time too short for the time step")
    lead = n_steps - n_tail + 1
    mid = solve_kg(grid, init.V, init.hbar, init.m, init, lead, dt, stride=lead)[-1]
    return solve_kg(grid, init.V, init.hbar, init.m, mid, n_tail - 1, dt)


@dataclass(eq=False)
class ScalingResult:
    hbar: np.ndarray
    sup_residual: np.ndarray
    slope: float
    intercept: float
    degenerate: bool
    caustic: bool
    continuity: dict = dc_field(default_factory=dict)


DEGENERATE_FLOOR = 1e-10


def fit_slope(hbar, values):
    x = np.log(np.asarray(hbar, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def scaling_study(hbar_list, cfg: LiqConfig | None = None, refine_continuity: bool = False) -> ScalingResult:
    """Fit ``log sup|R|`` against ``log hbar`` for the WKB family at time ``T``.

    With ``refine_continuity`` each run is repeated on a 2x refined grid and
    the continuity residual norms of both resolutions are reported.
    """
    cfg = cfg or LiqConfig()
    hb = np.asarray(sorted(hbar_list, reverse=True), dtype=float)
    if hb.size < 4:
        raise ValidationError("scaling study needs at least four hbar values")
    if hb.max() / hb.min() < 8 - 1e-12:
        raise ValidationError("hbar values must span at least a factor of 8")
    sups, caustic, cont = [], False, {}
    for h in hb:
        grid, slices = wkb_run(cfg, h)
        mid = slices[1]
        caustic |= not is_connected(mid.valid_mask)
        sups.append(float(np.nanmax(np.abs(hj_residual(mid, cfg.m)))))
        if refine_continuity:
            norms = [l2_norm(continuity_residual(slices), grid.dq)]
            g2, s2 = wkb_run(cfg, h, refine=2)
            norms.append(l2_norm(continuity_residual(s2), g2.dq))
            cont[float(h)] = tuple(norms)
    sups = np.array(sups)
    if np.all(sups < DEGENERATE_FLOOR):
        return ScalingResult(hb, sups, float("nan"), float("nan"), True, caustic, cont)
    slope, intercept = fit_slope(hb, sups)
    return ScalingResult(hb, sups, slope, intercept, False, caustic, cont)


# ------------------------------------------------------- sign of rho u0


def plane_wave_state(grid: Grid1D, modes, hbar: float, m: float) -> KGState:
    """Superposition of plane waves ``A exp(i (k q - w t) / hbar)``.

    ``modes`` holds ``(A, k, sign)`` with ``w = sign * sqrt(m^2 + k^2)``.
    """
    q = grid.q
    psi = np.zeros(q.shape, complex)
    psi_dot = np.zeros(q.shape, complex)
    for A, k, sign in modes:
        w = sign * np.sqrt(m**2 + k**2)
        e = A * np.exp(1j * k * q / hbar)
        psi += e
        psi_dot += -1j * w / hbar * e
    return KGState(psi, psi_dot, hbar, m, np.zeros_like(q))


@dataclass(eq=False)
class WitnessResult:
    min_value: float
    location: float
    max_value: float
    oracle_location: float
    oracle_value: float
    state: KGState
    density: np.ndarray


def negative_density_witness(grid: Grid1D, m: float, hbar: float, k: float | None = None) -> WitnessResult:
    """Two-mode state whose charge density ``rho u0`` takes both signs.

    A positive-frequency mode at rest (``w1 = m``) and a negative-frequency
    mode of momentum ``k`` (``w2 = sqrt(m^2 + k^2)``) with weights balanced
    so that ``A^2 w1 = B^2 w2`` give ``rho u0 = A B (w2 - w1) cos(k q / hbar)``
    at ``t = 0``; the minimum sits where ``k q / hbar = pi`` mod ``2 pi``.
    """
    if not m > 0:
        raise ValidationError("the witness needs m > 0")
    L = grid.length
    quantum = 2 * np.pi * hbar / L  # k must fit the periodic box
    j = max(1, int(round((m if k is None else k) / quantum)))
    k = j * quantum
    w1, w2 = m, np.sqrt(m**2 + k**2)
    A = np.sqrt(w2 / (w1 + w2))
    B = np.sqrt(w1 / (w1 + w2))
    state = plane_wave_state(grid, [(A, 0.0, +1), (B, k, -1)], hbar, m)
    pair = madelung(state, grid.dq)
    dens = np.where(pair.valid_mask, pair.rho * pair.u0, np.nan)
    if not np.nanmin(dens) < 0:
        raise RuntimeError("two-mode construction failed to produce a negative density")
    i = int(np.nanargmin(dens))
    period = 2 * np.pi * hbar / k
    q = grid.q
    # closed-form minima lie at q = (pi + 2 pi n) hbar / k; take the nearest
    q_star = period / 2 + period * np.round((q[i] - period / 2) / period)
    return WitnessResult(
        float(dens[i]), float(q[i]), float(np.nanmax(dens)), float(q_star), float(-A * B * (w2 - w1)), state, dens
    )
