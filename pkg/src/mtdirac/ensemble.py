"""Born-rule sampling, equivariance statistics, peak counting and
trajectory classification."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .guidance import PairPosition, PairTrajectory, TrajectoryBundle, integrate_pairs
from .lattice import GridSpec, ValidationError, density
from .presets import Setup

SAMPLER_ALGORITHM = "numpy-pcg64/inverse-cdf+cell-jitter/v1"
CATEGORIES = ("both_left", "both_right", "diverge", "bounce")


@dataclass(frozen=True)
class SeededSampler:
    seed: int
    algorithm: str = SAMPLER_ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.algorithm != SAMPLER_ALGORITHM:
            raise ValidationError(f"unknown sampler algorithm {self.algorithm!r}")

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64([int(self.seed), stream]))


def sample_arrays(rho: np.ndarray, grid: GridSpec, n: int, sampler: SeededSampler, stream: int = 0):
    """Draw ``n`` positions Born-distributed over ``rho``; returns ``(z_ph, z_el)``."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (grid.n, grid.n):
        raise ValidationError("density shape does not match the grid")
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ValidationError("density must be finite and non-negative")
    cdf = np.cumsum(rho.ravel())
    total = cdf[-1]
    if not total > 0:
        raise ValidationError("cannot sample from an all-zero density")
    rng = sampler.rng(stream)
    u = rng.random(n)
    jitter = rng.random((n, 2)) - 0.5
    idx = np.searchsorted(cdf, u * total, side="right")
    idx = np.minimum(idx, cdf.size - 1)
    i, j = np.divmod(idx, grid.n)
    z = grid.z
    return z[i] + jitter[:, 0] * grid.dz, z[j] + jitter[:, 1] * grid.dz


def sample_density(rho, grid: GridSpec, n: int, sampler: SeededSampler) -> list[PairPosition]:
    z_ph, z_el = sample_arrays(rho, grid, n, sampler)
    return [PairPosition(float(a), float(b)) for a, b in zip(z_ph, z_el)]


def _check_bins(grid: GridSpec, B: int):
    if B < 1 or grid.n % B:
        raise ValidationError(f"B = {B} must divide the grid size {grid.n}")


def coarse_histogram(points, grid: GridSpec, B: int) -> np.ndarray:
    """B x B counts over the grid's cell extent. ``points`` is ``(z_ph, z_el)``
    or a sequence of :class:`PairPosition`."""
    _check_bins(grid, B)
    if isinstance(points, tuple) and len(points) == 2 and not isinstance(points[0], PairPosition):
        z_ph, z_el = (np.asarray(a, dtype=float) for a in points)
    else:
        z_ph = np.array([p.z_ph for p in points], dtype=float)
        z_el = np.array([p.z_el for p in points], dtype=float)
    width = grid.length / B
    lo = grid.origin - grid.dz / 2
    bx = np.clip(np.floor((z_ph - lo) / width).astype(int), 0, B - 1)
    by = np.clip(np.floor((z_el - lo) / width).astype(int), 0, B - 1)
    hist = np.zeros((B, B), dtype=np.int64)
    np.add.at(hist, (bx, by), 1)
    return hist


def box_mass(rho: np.ndarray, grid: GridSpec, B: int) -> np.ndarray:
    """Normalized probability per coarse bin."""
    _check_bins(grid, B)
    c = grid.n // B
    mass = np.asarray(rho, dtype=float).reshape(B, c, B, c).sum(axis=(1, 3))
    return mass / mass.sum()


def tv_distance(hist: np.ndarray, rho: np.ndarray, grid: GridSpec, B: int) -> float:
    hist = np.asarray(hist, dtype=float)
    if hist.shape != (B, B):
        raise ValidationError("histogram shape does not match B")
    emp = hist / hist.sum()
    return float(0.5 * np.abs(emp - box_mass(rho, grid, B)).sum())


def tv_null(rho, grid: GridSpec, B: int, n: int, reps: int, sampler: SeededSampler, stream: int = 1) -> np.ndarray:
    """TV distances of ``reps`` direct resamples of size ``n`` from ``rho``.

    Jittered samples never leave their cell and bins are unions of cells, so
    the coarse counts of a resample are exactly multinomial over the box
    masses; drawing them that way skips materializing positions.
    """
    mass = box_mass(rho, grid, B).ravel()
    rng = sampler.rng(stream)
    counts = rng.multinomial(n, mass, size=reps)
    return 0.5 * np.abs(counts / n - mass).sum(axis=1)


def _peak_labels(rho, w, rel_threshold):
    if w < 1:
        raise ValidationError("smoothing width must be >= 1")
    s = ndimage.uniform_filter(np.asarray(rho, dtype=float), size=int(w), mode="constant")
    top = s.max()
    if not top > 0:
        return s, np.zeros(s.shape, dtype=int), 0
    neigh = ndimage.maximum_filter(s, size=3, mode="constant", cval=-np.inf)
    cand = (s >= neigh) & (s > rel_threshold * top)
    labels, n = ndimage.label(cand, structure=np.ones((3, 3), dtype=int))
    return s, labels, int(n)


def count_peaks(rho: np.ndarray, w: int = 8, rel_threshold: float = 0.1) -> int:
    """Number of local maxima of the box-smoothed density above threshold.

    Plateaus of equal maximal value (which an even box width produces) are
    counted once.
    """
    return _peak_labels(rho, w, rel_threshold)[2]


def peak_positions(rho: np.ndarray, grid: GridSpec, w: int = 8, rel_threshold: float = 0.1) -> np.ndarray:
    """``(n_peaks, 2)`` array of peak locations ``(z_ph, z_el)``, tallest first."""
    s, labels, n = _peak_labels(rho, w, rel_threshold)
    if n == 0:
        return np.zeros((0, 2))
    idx = np.arange(1, n + 1)
    centers = np.array(ndimage.center_of_mass(np.ones(s.shape), labels, idx))
    heights = np.array(ndimage.maximum(s, labels, idx))
    order = np.argsort(-heights, kind="stable")
    return grid.origin + grid.dz * centers[order]


@dataclass(frozen=True)
class Classification:
    category: str
    capture_interval: float  # longest dwell within d_capture, 0 if below tau_capture
    capture_end: int | None = None  # sample index where that dwell ends


def _longest_run(mask: np.ndarray, times: np.ndarray):
    best, best_end, start = 0.0, None, None
    for k, inside in enumerate(np.append(mask, False)):
        if inside and start is None:
            start = k
        elif not inside and start is not None:
            span = times[k - 1] - times[start]
            if span > best:
                best, best_end = span, k - 1
            start = None
    return best, best_end


def classify_arrays(times, z_ph, z_el, d_capture: float, tau_capture: float) -> Classification:
    times = np.asarray(times, dtype=float)
    z_ph = np.asarray(z_ph, dtype=float)
    z_el = np.asarray(z_el, dtype=float)
    if times.size < 2:
        raise ValidationError("trajectory needs at least two samples")
    k0 = min(int(0.9 * (times.size - 1)), times.size - 2)
    s_ph = np.sign(z_ph[-1] - z_ph[k0])
    s_el = np.sign(z_el[-1] - z_el[k0])
    sep = np.abs(z_ph - z_el)
    if s_ph < 0 and s_el < 0:
        cat = "both_left"
    elif s_ph > 0 and s_el > 0:
        cat = "both_right"
    elif np.all(np.diff(sep) >= -1e-12 * max(1.0, float(sep.max()))):
        cat = "diverge"
    else:
        cat = "bounce"
    span, end = _longest_run(sep <= d_capture, times)
    if span < tau_capture:
        span, end = 0.0, None
    return Classification(cat, float(span), end)


def classify_trajectory(traj: PairTrajectory, d_capture: float = 1.0, tau_capture: float = 5.0) -> Classification:
    return classify_arrays(traj.times, traj.z_ph, traj.z_el, d_capture, tau_capture)


@dataclass(frozen=True)
class EquivarianceConfig:
    setup: Setup
    n_samples: int = 10_000
    n_steps: int = 200
    bins: int = 16
    seed: int = 0
    d_capture: float = 1.0
    tau_capture: float = 5.0
    null_reps: int = 1000
    workers: int = 1
    edge_tol: float | None = 1e-6

    def __post_init__(self):
        if self.n_samples < 1 or self.n_steps < 0 or self.null_reps < 1:
            raise ValidationError("n_samples, null_reps must be positive and n_steps non-negative")
        _check_bins(self.setup.grid, self.bins)


@dataclass(eq=False)
class EnsembleReport:
    n_samples: int
    tv_distance: float
    tv_threshold: float
    histogram: np.ndarray
    classifications: dict
    crossing_guard_events: int
    degenerate_events: int
    seed: int
    algorithm: str = SAMPLER_ALGORITHM
    labels: list = dc_field(default_factory=list)
    bundle: TrajectoryBundle | None = None
    rho_final: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return self.tv_distance <= self.tv_threshold


def run_equivariance(config: EquivarianceConfig) -> EnsembleReport:
    """Sample from rho(0), carry the pairs with the field, compare with rho(T)."""
    setup = config.setup
    grid = setup.grid
    field0 = setup.field()
    sampler = SeededSampler(config.seed)
    z_ph, z_el = sample_arrays(density(field0), grid, config.n_samples, sampler)
    bundle = integrate_pairs(
        (z_ph, z_el), field0, setup.params, config.n_steps, config.workers, config.edge_tol, config.seed
    )
    rho_T = density(bundle.field)
    hist = coarse_histogram((bundle.z_ph[-1], bundle.z_el[-1]), grid, config.bins)
    tv = tv_distance(hist, rho_T, grid, config.bins)
    null = tv_null(rho_T, grid, config.bins, config.n_samples, config.null_reps, sampler)
    labels = [
        classify_arrays(bundle.times, bundle.z_ph[:, k], bundle.z_el[:, k], config.d_capture, config.tau_capture)
        for k in range(bundle.n_pairs)
    ]
    counts = {c: 0 for c in CATEGORIES}
    for lab in labels:
        counts[lab.category] += 1
    return EnsembleReport(
        n_samples=config.n_samples,
        tv_distance=tv,
        tv_threshold=float(np.percentile(null, 99)),
        histogram=hist,
        classifications=counts,
        crossing_guard_events=bundle.crossing_events,
        degenerate_events=bundle.degenerate_events,
        seed=config.seed,
        labels=labels,
        bundle=bundle,
        rho_final=rho_T,
    )


@dataclass(eq=False)
class CaptureScan:
    separations: np.ndarray
    labels: list
    released: np.ndarray  # capture followed by separation beyond release_factor * d_capture
    bundle: TrajectoryBundle

    @property
    def best(self) -> int:
        return int(np.argmax([lab.capture_interval for lab in self.labels]))


def capture_scan(
    setup: Setup,
    separations,
    n_steps: int,
    d_capture: float = 1.0,
    tau_capture: float = 5.0,
    release_factor: float = 4.0,
    edge_tol: float | None = 1e-6,
) -> CaptureScan:
    """Photon trajectories started successively closer to an electron at the
    electron packet center, all guided by one field evolution."""
    seps = np.asarray(separations, dtype=float)
    sign = -1.0 if setup.side == "photon_left" else 1.0
    z_el = np.full(seps.shape, setup.electron.center)
    z_ph = z_el + sign * seps
    bundle = integrate_pairs((z_ph, z_el), setup.field(), setup.params, n_steps, edge_tol=edge_tol)
    labels = []
    released = np.zeros(seps.shape, dtype=bool)
    for k in range(seps.size):
        lab = classify_arrays(bundle.times, bundle.z_ph[:, k], bundle.z_el[:, k], d_capture, tau_capture)
        labels.append(lab)
        if lab.capture_end is not None:
            after = np.abs(bundle.z_ph[lab.capture_end :, k] - bundle.z_el[lab.capture_end :, k])
            released[k] = bool(after.max() > release_factor * d_capture)
    return CaptureScan(seps, labels, released, bundle)
