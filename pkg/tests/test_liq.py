import numpy as np
import pytest

from mtdirac.lattice import ValidationError
from mtdirac.liq import (
    Grid1D,
    KGBlowup,
    KGState,
    LiqConfig,
    MadelungPair,
    centered_grid,
    continuity_residual,
    hj_residual,
    is_connected,
    l2_norm,
    madelung,
    negative_density_witness,
    plane_wave_state,
    quantum_correction,
    scaling_study,
    solve_kg,
    weighted_rms,
    wkb_run,
    wkb_state,
)


def discrete_theta(k, m, hbar, dq, dt):
    """Per-step phase of a lattice plane wave, from direct substitution."""
    lam = 4 * np.sin(k * dq / (2 * hbar)) ** 2 / dq**2 + m**2 / hbar**2
    return np.arccos(1 - dt**2 * lam / 2)


def lattice_plane_wave(grid, k, m, hbar, dt, amp=1.0):
    psi = amp * np.exp(1j * k * grid.q / hbar)
    theta = discrete_theta(k, m, hbar, grid.dq, dt)
    return KGState(psi, -1j * np.sin(theta) / dt * psi, hbar, m, 0.0), theta


# -- solver -----------------------------------------------------------------------


def test_plane_wave_follows_discrete_dispersion():
    hbar, m = 0.5, 1.2
    grid = Grid1D(64, 0.1, 0.0)
    k = 2 * np.pi * hbar * 3 / grid.length
    dt = 0.05
    init, theta = lattice_plane_wave(grid, k, m, hbar, dt)
    states = solve_kg(grid, 0.0, hbar, m, init, 200, dt)
    for n, s in enumerate(states):
        np.testing.assert_allclose(s.psi, np.exp(-1j * n * theta) * init.psi, atol=1e-10)
    ratio = states[-1].psi / states[-2].psi
    assert np.allclose(-np.angle(ratio), theta, atol=1e-10)
    # and the continuum frequency is only approached at discretization order
    omega = np.sqrt(m**2 + k**2)
    assert abs(theta * hbar / dt - omega) < 1e-2 * omega


def massless_translation_error(dq):
    grid = centered_grid(24.0, dq)
    q = grid.q
    f = np.exp(-(q**2) / 2)
    fp = -q * f
    init = KGState(f.astype(complex), fp.astype(complex), 1.0, 0.0, 0.0)
    dt = dq / 2
    T = 4.0
    n = int(round(T / dt))
    out = solve_kg(grid, 0.0, 1.0, 0.0, init, n, dt, stride=n)[-1]
    exact = np.exp(-((q + T) ** 2) / 2)
    return np.abs(out.psi - exact).max()


def test_massless_packet_translates_left_at_second_order():
    e1 = massless_translation_error(0.1)
    e2 = massless_translation_error(0.05)
    assert e1 < 5e-3
    assert 3.5 < e1 / e2 < 4.5


def test_zero_steps_returns_init():
    grid = Grid1D(16, 0.1)
    init, _ = lattice_plane_wave(grid, 0.0, 1.0, 1.0, 0.05)
    assert solve_kg(grid, 0.0, 1.0, 1.0, init, 0, 0.05) == [init]


def test_cfl_violation_rejected():
    grid = Grid1D(16, 0.1)
    init, _ = lattice_plane_wave(grid, 0.0, 1.0, 1.0, 0.05)
    with pytest.raises(ValidationError, match="CFL"):
        solve_kg(grid, 0.0, 1.0, 1.0, init, 5, 0.2)


def test_unstable_run_reports_step():
    grid = Grid1D(16, 0.1)
    init, _ = lattice_plane_wave(grid, 0.0, 1.0, 1.0, 0.05)
    with pytest.raises(KGBlowup) as exc:
        solve_kg(grid, 0.0, 1.0, 50.0, init, 2000, 0.1)
    assert exc.value.step > 1


def test_stride_keeps_every_nth_state():
    grid = Grid1D(32, 0.1)
    init, _ = lattice_plane_wave(grid, 0.0, 1.0, 1.0, 0.05)
    out = solve_kg(grid, 0.0, 1.0, 1.0, init, 10, 0.05, stride=5)
    assert [round(s.t / 0.05) for s in out] == [0, 5, 10]


# -- Madelung decomposition -----------------------------------------------------------


def test_madelung_plane_wave_closed_form():
    grid = Grid1D(64, 0.05, -1.6)
    hbar, A, V = 0.3, 0.7, 0.25
    k = 2 * np.pi * hbar * 3 / grid.length
    omega = 2.1
    psi = A * np.exp(1j * k * grid.q / hbar)
    pair = madelung(KGState(psi, -1j * omega / hbar * psi, hbar, 1.0, V), grid.dq)
    np.testing.assert_allclose(pair.rho, A**2, atol=1e-14)
    np.testing.assert_allclose(pair.u0, -omega + V, atol=1e-12)
    np.testing.assert_allclose(pair.u1, k, atol=1e-12)
    assert pair.valid_mask.all()


def test_real_gaussian_has_zero_phase():
    grid = centered_grid(12.0, 0.05)
    psi = np.exp(-grid.q**2)
    pair = madelung(KGState(psi, np.zeros_like(psi), 1.0, 1.0, 0.0), grid.dq)
    v = pair.valid_mask
    assert np.all(pair.s_tilde[v] == 0.0)
    assert np.all(pair.u1[np.isfinite(pair.u1)] == 0.0)


def test_madelung_round_trip():
    grid = centered_grid(16.0, 0.02)
    q = grid.q
    hbar = 0.1
    psi = np.exp(-(q**2) / 4) * np.exp(1j * (0.8 * q + 0.3 * q**2) / hbar)
    pair = madelung(KGState(psi, np.zeros_like(psi), hbar, 1.0, 0.0), grid.dq)
    v = pair.valid_mask
    rebuilt = np.sqrt(pair.rho[v]) * np.exp(1j * pair.s_tilde[v] / hbar)
    np.testing.assert_allclose(rebuilt, psi[v], atol=1e-12)


def test_vanishing_field_rejected():
    grid = Grid1D(16, 0.1)
    with pytest.raises(ValidationError):
        madelung(KGState(np.zeros(16), np.zeros(16), 1.0, 1.0, 0.0), grid.dq)


def test_hj_residual_vanishes_for_plane_wave():
    grid = Grid1D(64, 0.05)
    hbar, m = 0.2, 1.0
    k = 2 * np.pi * hbar * 4 / grid.length
    st = plane_wave_state(grid, [(1.0, k, +1)], hbar, m)
    np.testing.assert_allclose(hj_residual(madelung(st, grid.dq), m), 0.0, atol=1e-12)


# -- quantum correction and continuity ------------------------------------------------


def static_slices(rho, dq, hbar, dt=0.01):
    valid = rho > 0
    return [
        MadelungPair(rho, np.zeros_like(rho), np.zeros_like(rho), np.zeros_like(rho), valid, hbar, dq, k * dt)
        for k in range(3)
    ]


def test_quantum_correction_of_constant_density():
    rho = np.full(32, 0.4)
    np.testing.assert_allclose(quantum_correction(static_slices(rho, 0.1, 0.5)), 0.0, atol=1e-12)


def gaussian_q_error(dq, sigma=1.0, hbar=0.3):
    grid = centered_grid(20.0, dq)
    q = grid.q
    rho = np.exp(-(q**2) / (2 * sigma**2))
    got = quantum_correction(static_slices(rho, dq, hbar))
    want = -(hbar**2) * (q**2 / (4 * sigma**4) - 1 / (2 * sigma**2))
    core = np.abs(q) < 3 * sigma
    return np.abs(got[core] - want[core]).max()


def test_quantum_correction_static_gaussian():
    e1, e2 = gaussian_q_error(0.1), gaussian_q_error(0.05)
    assert e1 < 1e-3
    assert 3.5 < e1 / e2 < 4.5


def test_quantum_correction_needs_three_slices():
    s = static_slices(np.ones(16), 0.1, 1.0)
    with pytest.raises(ValidationError):
        quantum_correction(s[:2])
    uneven = [s[0], s[1], MadelungPair(s[2].rho, s[2].s_tilde, s[2].u0, s[2].u1, s[2].valid_mask, 1.0, 0.1, 0.05)]
    with pytest.raises(ValidationError):
        continuity_residual(uneven)


def test_continuity_of_plane_wave():
    hbar, m = 0.3, 1.0
    grid = Grid1D(64, 0.05)
    dt = 0.02
    k = 2 * np.pi * hbar * 2 / grid.length
    init, _ = lattice_plane_wave(grid, k, m, hbar, dt, amp=0.8)
    states = solve_kg(grid, 0.0, hbar, m, init, 4, dt)
    slices = [madelung(s, grid.dq) for s in states[1:4]]
    np.testing.assert_allclose(continuity_residual(slices), 0.0, atol=1e-10)


def test_continuity_of_zero_field():
    z = np.zeros(16)
    off = np.zeros(16, dtype=bool)
    slices = [MadelungPair(z, z, z * np.nan, z * np.nan, off, 1.0, 0.1, 0.01 * k) for k in range(3)]
    assert np.all(continuity_residual(slices) == 0.0)


def test_continuity_residual_is_second_order_for_a_packet():
    cfg = LiqConfig()
    for hbar in (0.2, 0.05):
        g1, s1 = wkb_run(cfg, hbar)
        g2, s2 = wkb_run(cfg, hbar, refine=2)
        ratio = l2_norm(continuity_residual(s1), g1.dq) / l2_norm(continuity_residual(s2), g2.dq)
        assert 3.2 <= ratio <= 4.8


# -- WKB family and scaling ------------------------------------------------------------


def test_wkb_state_is_on_the_negative_branch():
    cfg = LiqConfig()
    grid = centered_grid(cfg.length, 0.02)
    st = wkb_state(grid, cfg, 0.1)
    pair = madelung(st, grid.dq)
    core = pair.rho > 1e-3 * pair.rho.max()
    # u0 ~ -(classical energy) with the particle at rest: -m plus O(hbar^2)
    np.testing.assert_allclose(pair.u0[core], -cfg.m, atol=0.02)


def test_scaling_study_rejects_short_lists():
    with pytest.raises(ValidationError):
        scaling_study([0.2, 0.1, 0.05])
    with pytest.raises(ValidationError):
        scaling_study([0.2, 0.15, 0.1, 0.05])


def test_plane_wave_family_is_degenerate():
    cfg = LiqConfig(m=0.0, V0=0.0, sigma=None, T=0.05)
    res = scaling_study([0.2, 0.1, 0.05, 0.025], cfg)
    assert res.degenerate and np.isnan(res.slope)
    assert res.sup_residual.max() < 1e-10


def test_weighted_norms():
    assert weighted_rms(np.array([1.0, np.nan, 3.0]), np.array([1.0, 5.0, 1.0])) == pytest.approx(np.sqrt(5))
    assert l2_norm(np.array([3.0, np.nan, 4.0]), 0.25) == pytest.approx(2.5)


def test_is_connected_periodic():
    assert is_connected(np.array([1, 1, 0, 0, 1], bool))
    assert not is_connected(np.array([0, 1, 0, 1, 0], bool))
    assert is_connected(np.zeros(5, bool))


# -- sign of the charge density ----------------------------------------------------------


def test_witness_matches_closed_form():
    grid = centered_grid(24.0, 0.05)
    res = negative_density_witness(grid, 1.0, 0.1)
    assert res.min_value < 0 < res.max_value
    assert abs(res.location - res.oracle_location) <= grid.dq
    assert res.min_value == pytest.approx(res.oracle_value, rel=1e-6)


def test_witness_needs_mass():
    with pytest.raises(ValidationError):
        negative_density_witness(centered_grid(24.0, 0.05), 0.0, 0.1)


def test_single_mode_density_has_one_sign():
    grid = centered_grid(24.0, 0.05)
    k = 2 * np.pi * 0.1 * 5 / grid.length
    pair = madelung(plane_wave_state(grid, [(1.0, k, +1)], 0.1, 1.0), grid.dq)
    j0, _ = pair.current()
    assert np.all(j0 < 0)


def test_massless_chiral_mode_is_null():
    grid = centered_grid(24.0, 0.05)
    k = 2 * np.pi * 0.1 * 5 / grid.length
    pair = madelung(plane_wave_state(grid, [(0.6, k, +1)], 0.1, 0.0), grid.dq)
    j0, j1 = pair.current()
    np.testing.assert_allclose(np.abs(j0), np.abs(j1), atol=1e-12)
