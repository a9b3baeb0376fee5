"""Run orchestration: one pipeline per CLI command, a manifest at the end."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .ensemble import (
    CATEGORIES,
    SAMPLER_ALGORITHM,
    EquivarianceConfig,
    SeededSampler,
    capture_scan,
    classify_arrays,
    run_equivariance,
    sample_arrays,
)
from .evolution import PhysicsAbort, evolve, multi_time_slice
from .guidance import TrajectoryBundle, integrate_pairs
from .lattice import density
from .liq import KGBlowup, centered_grid, negative_density_witness, scaling_study
from .serialize import dumps, sha256_file, write_csv, write_grid_csv, write_json, write_pgm

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PHYSICS = 3
EXIT_IO = 4


class CausticAbort(PhysicsAbort):
    pass


@dataclass
class Manifest:
    command: str
    directory: Path
    files: list = dc_field(default_factory=list)
    status: str = "ok"
    error: str | None = None
    summary: dict = dc_field(default_factory=dict)

    def record(self, path: Path) -> None:
        self.files.append(path)

    def entries(self):
        return [
            {"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
            for p in sorted(self.files, key=lambda p: p.name)
        ]


class _Writer:
    """Writes data files plus their metadata sidecars into one directory."""

    def __init__(self, cfg: RunConfig, directory: Path, manifest: Manifest):
        self.cfg = cfg
        self.dir = directory
        self.manifest = manifest
        self.meta = {
            "version": __version__,
            "sampler_algorithm": SAMPLER_ALGORITHM,
            "config": cfg.embedded(),
        }

    def _sidecar(self, path: Path, kind: str) -> None:
        side = self.dir / (path.name + ".meta.json")
        write_json(side, dict(self.meta, file=path.name, kind=kind))
        self.manifest.record(path)
        self.manifest.record(side)

    def json(self, name: str, obj) -> None:
        path = write_json(self.dir / name, {"meta": self.meta, "data": obj})
        self._sidecar(path, "json")

    def csv(self, name: str, header, rows) -> None:
        self._sidecar(write_csv(self.dir / name, header, rows), "csv")

    def density(self, stem: str, rho: np.ndarray) -> None:
        formats = self.cfg.output.formats
        if "pgm" in formats:
            self._sidecar(write_pgm(self.dir / f"{stem}.pgm", rho), "pgm")
        if "csv" in formats:
            self._sidecar(write_grid_csv(self.dir / f"{stem}.csv", rho), "grid-csv")


def _diag_rows(diags):
    return [(d.step_index, d.total_norm, d.side_norm_left, d.side_norm_right, d.edge_norm) for d in diags]


DIAG_HEADER = ["step", "total_norm", "side_norm_left", "side_norm_right", "edge_norm"]
TRAJ_HEADER = ["pair", "step", "t", "z_ph", "z_el", "alive"]
PAIR_HEADER = ["pair", "z_ph_0", "z_el_0", "z_ph_final", "z_el_final", "category", "capture_interval"]


def _traj_rows(bundle: TrajectoryBundle):
    T, P = bundle.z_ph.shape
    for k in range(P):
        for s in range(T):
            yield (k, s, bundle.times[s], bundle.z_ph[s, k], bundle.z_el[s, k], bundle.alive[s, k])


def _pair_rows(bundle, labels):
    for k, lab in enumerate(labels):
        yield (
            k, bundle.z_ph[0, k], bundle.z_el[0, k], bundle.z_ph[-1, k], bundle.z_el[-1, k],
            CATEGORIES.index(lab.category), lab.capture_interval,
        )


def _evolve(cfg: RunConfig, w: _Writer, m: Manifest):
    setup = cfg.setup()
    stride = cfg.run.snapshot_stride or max(cfg.run.n_steps, 1)
    try:
        final, diags, snaps = evolve(setup.field(), setup.params, cfg.run.n_steps, stride, cfg.run.edge_tol)
    except PhysicsAbort as exc:
        for k, rho in exc.snapshots:
            w.density(f"density_{k:05d}", rho)
        w.csv("diagnostics.csv", DIAG_HEADER, _diag_rows(exc.diagnostics))
        raise
    if not snaps or snaps[-1][0] != cfg.run.n_steps:
        snaps.append((cfg.run.n_steps, density(final)))
    for k, rho in snaps:
        w.density(f"density_{k:05d}", rho)
    w.csv("diagnostics.csv", DIAG_HEADER, _diag_rows(diags))
    m.summary = {"n_steps": cfg.run.n_steps, "snapshots": [k for k, _ in snaps]}
    if diags:
        m.summary["final_total_norm"] = diags[-1].total_norm


def _multitime(cfg: RunConfig, w: _Writer, m: Manifest):
    setup = cfg.setup()
    final, diags, _ = evolve(setup.field(), setup.params, cfg.run.n_steps, 0, cfg.run.edge_tol)
    rho, valid = multi_time_slice(final, cfg.run.tau)
    w.density("multitime_density", rho)
    w.csv("multitime_valid.csv", ["fraction_valid"], [(float(valid.mean()),)])
    m.summary = {"tau": cfg.run.tau, "n_steps": cfg.run.n_steps, "norm": float(rho.sum() * setup.grid.dz**2)}


def _pairs(cfg: RunConfig, w: _Writer, m: Manifest):
    setup = cfg.setup()
    ens = cfg.ensemble
    if ens.separations:
        scan = capture_scan(setup, ens.separations, cfg.run.n_steps, ens.d_capture, ens.tau_capture, edge_tol=cfg.run.edge_tol)
        bundle, labels = scan.bundle, scan.labels
        m.summary["released"] = [bool(x) for x in scan.released]
    else:
        field0 = setup.field()
        z_ph, z_el = sample_arrays(density(field0), setup.grid, ens.n_samples, SeededSampler(ens.seed))
        bundle = integrate_pairs((z_ph, z_el), field0, setup.params, cfg.run.n_steps, cfg.run.workers, cfg.run.edge_tol, ens.seed)
        labels = [
            classify_arrays(bundle.times, bundle.z_ph[:, k], bundle.z_el[:, k], ens.d_capture, ens.tau_capture)
            for k in range(bundle.n_pairs)
        ]
    w.csv("trajectories.csv", TRAJ_HEADER, _traj_rows(bundle))
    w.csv("pairs.csv", PAIR_HEADER, _pair_rows(bundle, labels))
    m.summary.update(
        n_pairs=bundle.n_pairs,
        crossing_guard_events=bundle.crossing_events,
        degenerate_events=bundle.degenerate_events,
        sign_changes=int(bundle.sign_changed().sum()),
    )
    w.json("summary.json", m.summary)


def _ensemble(cfg: RunConfig, w: _Writer, m: Manifest):
    ens = cfg.ensemble
    rep = run_equivariance(
        EquivarianceConfig(
            cfg.setup(), ens.n_samples, cfg.run.n_steps, ens.bins, ens.seed, ens.d_capture, ens.tau_capture,
            ens.null_reps, cfg.run.workers, cfg.run.edge_tol,
        )
    )
    record = {
        "n_samples": rep.n_samples,
        "tv_distance": rep.tv_distance,
        "tv_threshold_p99": rep.tv_threshold,
        "passed": rep.passed,
        "classifications": rep.classifications,
        "crossing_guard_events": rep.crossing_guard_events,
        "degenerate_events": rep.degenerate_events,
        "seed": rep.seed,
        "category_codes": list(CATEGORIES),
    }
    w.json("ensemble_report.json", record)
    w.csv("histogram.csv", [f"b{j}" for j in range(ens.bins)], rep.histogram.tolist())
    w.csv("trajectories.csv", TRAJ_HEADER, _traj_rows(rep.bundle))
    w.csv("pairs.csv", PAIR_HEADER, _pair_rows(rep.bundle, rep.labels))
    w.density("density_final", rep.rho_final)
    m.summary = {k: record[k] for k in ("tv_distance", "tv_threshold_p99", "passed", "classifications")}


def _liq_scaling(cfg: RunConfig, w: _Writer, m: Manifest):
    lq = cfg.liq
    res = scaling_study(lq.hbar_list, lq.liq_config(), refine_continuity=lq.refine_continuity)
    rows = []
    for h, s in zip(res.hbar, res.sup_residual):
        base, fine = res.continuity.get(float(h), (float("nan"), float("nan")))
        rows.append((h, s, base, fine))
    w.csv("scaling.csv", ["hbar", "sup_hj_residual", "continuity_norm", "continuity_norm_refined"], rows)
    m.summary = {"slope": res.slope, "intercept": res.intercept, "degenerate": res.degenerate, "caustic": res.caustic}
    w.json("scaling.json", m.summary)
    if res.caustic:
        raise CausticAbort("valid region fragmented before the evaluation time (caustic)")


def _liq_witness(cfg: RunConfig, w: _Writer, m: Manifest):
    lq = cfg.liq
    grid = centered_grid(lq.length, lq.witness_dq)
    res = negative_density_witness(grid, lq.m, lq.hbar)
    w.csv("witness.csv", ["q", "rho_u0"], zip(grid.q, res.density))
    m.summary = {
        "min_rho_u0": res.min_value,
        "location": res.location,
        "max_rho_u0": res.max_value,
        "oracle_location": res.oracle_location,
        "oracle_min": res.oracle_value,
    }
    w.json("witness.json", m.summary)


PIPELINES = {
    "evolve": _evolve,
    "multitime-slice": _multitime,
    "pair-trajectories": _pairs,
    "ensemble": _ensemble,
    "liq-scaling": _liq_scaling,
    "liq-witness": _liq_witness,
}


def write_manifest(m: Manifest, cfg: RunConfig) -> Path:
    body = {
        "command": m.command,
        "status": m.status,
        "error": m.error,
        "version": __version__,
        "sampler_algorithm": SAMPLER_ALGORITHM,
        "config": cfg.embedded(),
        "summary": m.summary,
        "files": m.entries(),
    }
    path = m.directory / "manifest.json"
    path.write_text(dumps(body))
    return path


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[Manifest, int]:
    """Execute ``cfg``; returns the manifest and the exit status.

    Physics aborts (edge overflow, caustics, blowups) and I/O failures still
    leave a manifest describing whatever was written before they happened.
    """
    directory = Path(out_dir or cfg.output.directory)
    m = Manifest(cfg.command, directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        m.status, m.error = "io-error", str(exc)
        return m, EXIT_IO
    w = _Writer(cfg, directory, m)
    code = EXIT_OK
    try:
        PIPELINES[cfg.command](cfg, w, m)
    except (PhysicsAbort, KGBlowup) as exc:
        m.status, m.error, code = "physics-abort", str(exc), EXIT_PHYSICS
    except OSError as exc:
        m.status, m.error, code = "io-error", str(exc), EXIT_IO
    if code != EXIT_OK:
        try:
            w.json("error.json", {"status": m.status, "error": m.error})
        except OSError:
            pass
    try:
        write_manifest(m, cfg)
    except OSError as exc:
        m.status, m.error = "io-error", str(exc)
        return m, EXIT_IO
    return m, code
