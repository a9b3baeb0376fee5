"""Bohm-Dirac guidance on the lab-frame foliation.

Velocities are ratios of the conserved chiral currents to the density,
evaluated cell by cell and interpolated bilinearly. In interacting mode
the interpolation only uses cells on the pair's own side of the
coincidence set, so the guiding field never reaches across it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .evolution import EvolutionParams, evolve, mass_rotation
from .lattice import GridSpec, SpinorField2B

RHO_FLOOR = 1e-30


@dataclass(frozen=True)
class PairPosition:
    z_ph: float
    z_el: float
    alive: bool = True


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: GridSpec
    v_ph: np.ndarray
    v_el: np.ndarray
    degenerate: np.ndarray
    interacting: bool

    def __iter__(self):
        return iter((self.v_ph, self.v_el))


@dataclass(eq=False)
class PairTrajectory:
    times: np.ndarray
    z_ph: np.ndarray
    z_el: np.ndarray
    alive: np.ndarray
    index: int = 0
    seed: int | None = None

    @property
    def positions(self) -> list[PairPosition]:
        return [PairPosition(float(a), float(b), bool(c)) for a, b, c in zip(self.z_ph, self.z_el, self.alive)]

    def __len__(self):
        return len(self.times)


@dataclass(eq=False)
class TrajectoryBundle:
    """Trajectories of many pairs sampled on a common time axis."""

    times: np.ndarray
    z_ph: np.ndarray  # (n_times, n_pairs)
    z_el: np.ndarray
    alive: np.ndarray
    crossing_events: int
    degenerate_events: int
    crossing_pairs: np.ndarray
    field: SpinorField2B | None = None
    diagnostics: list = dc_field(default_factory=list)
    seed: int | None = None

    @property
    def n_pairs(self) -> int:
        return self.z_ph.shape[1]

    def trajectory(self, k: int) -> PairTrajectory:
        return PairTrajectory(self.times, self.z_ph[:, k], self.z_el[:, k], self.alive[:, k], k, self.seed)

    def trajectories(self) -> list[PairTrajectory]:
        return [self.trajectory(k) for k in range(self.n_pairs)]

    def sign_changed(self) -> np.ndarray:
        """Pairs whose ordering ``sign(z_ph - z_el)`` differs from the start."""
        s = np.sign(self.z_ph - self.z_el)
        return np.any(s != s[0], axis=0)


def velocity_field(field: SpinorField2B) -> VelocityField:
    p = field.comp.real**2 + field.comp.imag**2
    rho = p.sum(axis=(0, 1))
    j_ph = p[1].sum(axis=0) - p[0].sum(axis=0)
    j_el = p[:, 1].sum(axis=0) - p[:, 0].sum(axis=0)
    degenerate = rho < RHO_FLOOR
    safe = np.where(degenerate, 1.0, rho)
    v_ph = np.where(degenerate, 0.0, j_ph / safe)
    v_el = np.where(degenerate, 0.0, j_el / safe)
    return VelocityField(field.grid, v_ph, v_el, degenerate, field.interacting)


def step_velocity_fields(prev: SpinorField2B, new: SpinorField2B, m: float, dt: float):
    """Guiding fields at the two ends of one split step.

    The transport moves the chirality populations of the half-rotated spinor
    ``M(dt/2) psi``, so those populations (and their image ``M(-dt/2) psi'``
    after the step) carry the flux the lattice actually transports. Using the
    bare integer-time currents instead biases the electron flow by
    ``O(m dt)``.
    """
    pre = velocity_field(mass_rotation(prev, m, dt / 2))
    post = velocity_field(mass_rotation(new, m, -dt / 2))
    return pre, post


def velocities_at(vf: VelocityField, z_ph, z_el, side=None, no_flux=False):
    """Vectorized bilinear velocity lookup.

    ``side`` fixes which side of the diagonal the stencil may use (defaults
    to the side of each point). With ``no_flux`` the approach speed
    ``v_ph - v_el`` is ramped linearly to zero between the last cell row and
    the diagonal (interacting mode only). Returns ``(v_ph, v_el, degenerate)``.
    """
    grid = vf.grid
    n = grid.n
    z_ph = np.asarray(z_ph, dtype=float)
    z_el = np.asarray(z_el, dtype=float)
    x = grid.index_of(z_ph)
    y = grid.index_of(z_el)
    i0 = np.floor(x).astype(int)
    j0 = np.floor(y).astype(int)
    fx = x - i0
    fy = y - j0
    if side is None:
        side = np.sign(z_ph - z_el)
    num_ph = np.zeros(x.shape)
    num_el = np.zeros(x.shape)
    wsum = np.zeros(x.shape)
    for di in (0, 1):
        wx = fx if di else 1.0 - fx
        ii = i0 + di
        for dj in (0, 1):
            wy = fy if dj else 1.0 - fy
            jj = j0 + dj
            inside = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
            ic = np.clip(ii, 0, n - 1)
            jc = np.clip(jj, 0, n - 1)
            ok = inside & ~vf.degenerate[ic, jc]
            if vf.interacting:
                ok &= np.sign(ii - jj) == side
            w = np.where(ok, wx * wy, 0.0)
            num_ph += w * vf.v_ph[ic, jc]
            num_el += w * vf.v_el[ic, jc]
            wsum += w
    degenerate = wsum <= 0.0
    safe = np.where(degenerate, 1.0, wsum)
    v_ph = np.where(degenerate, 0.0, num_ph / safe)
    v_el = np.where(degenerate, 0.0, num_el / safe)
    if no_flux and vf.interacting:
        # no normal flux through the coincidence set: inside the last cell
        # the approach speed v_ph - v_el ramps linearly to zero
        ramp = np.clip(np.abs(x - y), 0.0, 1.0)
        normal = 0.5 * (v_ph - v_el) * (1.0 - ramp)
        v_ph = v_ph - normal
        v_el = v_el + normal
    return v_ph, v_el, degenerate


def velocity_at(field_or_vf, p: PairPosition):
    """Velocity of a single pair; returns ``(v_ph, v_el, degenerate)``."""
    vf = field_or_vf if isinstance(field_or_vf, VelocityField) else velocity_field(field_or_vf)
    v_ph, v_el, deg = velocities_at(vf, np.array([p.z_ph]), np.array([p.z_el]))
    return float(v_ph[0]), float(v_el[0]), bool(deg[0])


@dataclass
class _StepCounts:
    crossing: np.ndarray
    degenerate: np.ndarray


def _heun(vf_pre, vf_post, z_ph, z_el, alive, dt):
    side = np.sign(z_ph - z_el)
    v1p, v1e, d1 = velocities_at(vf_pre, z_ph, z_el, side, no_flux=True)
    pz_ph = z_ph + dt * v1p
    pz_el = z_el + dt * v1e
    v2p, v2e, d2 = velocities_at(vf_post, pz_ph, pz_el, side, no_flux=True)
    new_ph = z_ph + 0.5 * dt * (v1p + v2p)
    new_el = z_el + 0.5 * dt * (v1e + v2e)
    crossing = np.zeros(z_ph.shape, dtype=bool)
    if vf_pre.interacting:
        crossing = np.sign(new_ph - new_el) != side
        if np.any(crossing):
            # project back to half a cell from the diagonal on the original side
            total = new_ph + new_el
            gap = side * vf_pre.grid.dz / 2
            proj_ph = np.clip((total + gap) / 2, z_ph - dt, z_ph + dt)
            proj_el = np.clip((total - gap) / 2, z_el - dt, z_el + dt)
            still_bad = np.sign(proj_ph - proj_el) != side
            proj_ph = np.where(still_bad, z_ph, proj_ph)
            proj_el = np.where(still_bad, z_el, proj_el)
            new_ph = np.where(crossing, proj_ph, new_ph)
            new_el = np.where(crossing, proj_el, new_el)
    # pairs leaving the grid are frozen
    lo = vf_pre.grid.z[0]
    hi = vf_pre.grid.z[-1]
    inside = (new_ph >= lo) & (new_ph <= hi) & (new_el >= lo) & (new_el <= hi)
    alive_new = alive & inside
    new_ph = np.where(alive_new, new_ph, z_ph)
    new_el = np.where(alive_new, new_el, z_el)
    return new_ph, new_el, alive_new, _StepCounts(crossing & alive, (d1 | d2) & alive)


def _chunks(size, workers):
    bounds = np.linspace(0, size, max(1, workers) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _advance_arrays(vf_pre, vf_post, z_ph, z_el, alive, dt, workers=1):
    if workers <= 1 or z_ph.size < 2:
        return _heun(vf_pre, vf_post, z_ph, z_el, alive, dt)
    parts = _chunks(z_ph.size, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda s: _heun(vf_pre, vf_post, z_ph[s], z_el[s], alive[s], dt), parts))
    new_ph = np.concatenate([r[0] for r in results])
    new_el = np.concatenate([r[1] for r in results])
    new_alive = np.concatenate([r[2] for r in results])
    counts = _StepCounts(
        np.concatenate([r[3].crossing for r in results]),
        np.concatenate([r[3].degenerate for r in results]),
    )
    return new_ph, new_el, new_alive, counts


def _as_arrays(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2 and not isinstance(pairs[0], PairPosition):
        z_ph, z_el = (np.asarray(a, dtype=float) for a in pairs)
        return z_ph, z_el, np.ones(z_ph.shape, dtype=bool)
    z_ph = np.array([p.z_ph for p in pairs], dtype=float)
    z_el = np.array([p.z_el for p in pairs], dtype=float)
    alive = np.array([p.alive for p in pairs], dtype=bool)
    return z_ph, z_el, alive


def advance_pairs(
    pairs: Sequence[PairPosition],
    field_pre: SpinorField2B | VelocityField,
    field_post: SpinorField2B | VelocityField,
    dt: float,
) -> list[PairPosition]:
    """One Heun step for every alive pair between two consecutive snapshots."""
    vf_pre = field_pre if isinstance(field_pre, VelocityField) else velocity_field(field_pre)
    vf_post = field_post if isinstance(field_post, VelocityField) else velocity_field(field_post)
    z_ph, z_el, alive = _as_arrays(pairs)
    new_ph, new_el, new_alive, _ = _heun(vf_pre, vf_post, z_ph, z_el, alive, dt)
    return [PairPosition(float(a), float(b), bool(c)) for a, b, c in zip(new_ph, new_el, new_alive)]


def integrate_pairs(
    initial,
    field: SpinorField2B,
    params: EvolutionParams,
    n_steps: int,
    workers: int = 1,
    edge_tol: float | None = 1e-6,
    seed: int | None = None,
) -> TrajectoryBundle:
    """Evolve the field and carry the pairs along, one Heun step per field step.

    ``initial`` is a sequence of :class:`PairPosition` or a ``(z_ph, z_el)``
    tuple of arrays. Edge aborts from :func:`evolve` propagate.
    """
    z_ph, z_el, alive = _as_arrays(initial)
    dt = params.resolved_dt(field.grid)
    hist_ph = [z_ph]
    hist_el = [z_el]
    hist_alive = [alive]
    crossing_pairs = np.zeros(z_ph.shape, dtype=bool)
    totals = {"crossing": 0, "degenerate": 0}

    def carry(prev, new, k):
        vf_pre, vf_post = step_velocity_fields(prev, new, params.m, dt)
        ph, el, al, counts = _advance_arrays(vf_pre, vf_post, hist_ph[-1], hist_el[-1], hist_alive[-1], dt, workers)
        totals["crossing"] += int(counts.crossing.sum())
        totals["degenerate"] += int(counts.degenerate.sum())
        crossing_pairs[:] |= counts.crossing
        hist_ph.append(ph)
        hist_el.append(el)
        hist_alive.append(al)

    final, diags, _ = evolve(field, params, n_steps, 0, edge_tol=edge_tol, callback=carry)
    times = dt * np.arange(len(hist_ph))
    return TrajectoryBundle(
        times=times,
        z_ph=np.array(hist_ph),
        z_el=np.array(hist_el),
        alive=np.array(hist_alive),
        crossing_events=totals["crossing"],
        degenerate_events=totals["degenerate"],
        crossing_pairs=crossing_pairs,
        field=final,
        diagnostics=diags,
        seed=seed,
    )
