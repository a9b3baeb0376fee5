import json
import shutil
import subprocess

import numpy as np
import pytest

from mtdirac.cli import main
from mtdirac.config import RunConfig, load_config
from mtdirac.lattice import density
from mtdirac.serialize import pgm_bytes, read_pgm, sha256_file

SMALL = {
    "grid": {"n": 320, "dz": 0.25, "origin": -40.0},
    "params": {"m": 1.0, "theta": 0.0, "mode": "interacting"},
}


def write_config(tmp_path, name="cfg.json", **blocks):
    cfg = dict(SMALL)
    cfg.update(blocks)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def checksums(out):
    return {f["path"]: f["sha256"] for f in manifest(out)["files"]}


def test_evolve_zero_steps_writes_initial_density(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 0})
    out = tmp_path / "out"
    assert main(["evolve", "--config", str(cfg), "--out", str(out)]) == 0
    m = manifest(out)
    assert m["status"] == "ok"
    names = [f["path"] for f in m["files"]]
    assert "density_00000.pgm" in names and "density_00000.csv" in names
    rho0 = density(load_config(cfg, "evolve").setup().field())
    got = np.loadtxt(out / "density_00000.csv", delimiter=",")
    assert np.array_equal(got, rho0)
    img = read_pgm((out / "density_00000.pgm").read_bytes())
    assert np.array_equal(img, read_pgm(pgm_bytes(rho0)))


def test_pgm_orientation():
    rho = np.zeros((8, 8))
    rho[6, 1] = 1.0  # photon cell 6, electron cell 1
    img = read_pgm(pgm_bytes(rho))
    assert img.shape == (8, 8)
    # column = photon cell, electron cell counted upward from the bottom row
    assert img[8 - 1 - 1, 6] == 65535 and img.sum() == 65535


def test_every_file_has_sidecar_and_checksum(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 6, "snapshot_stride": 3})
    out = tmp_path / "out"
    assert main(["evolve", "--config", str(cfg), "--out", str(out)]) == 0
    entries = manifest(out)["files"]
    names = {e["path"] for e in entries}
    for e in entries:
        assert sha256_file(out / e["path"]) == e["sha256"]
        if not e["path"].endswith(".meta.json"):
            assert e["path"] + ".meta.json" in names
            meta = json.loads((out / (e["path"] + ".meta.json")).read_text())
            assert {"version", "sampler_algorithm", "config"} <= set(meta)
    assert {"density_00000.pgm", "density_00003.pgm", "density_00006.pgm", "diagnostics.csv"} <= names


def test_unknown_key_is_a_validation_error(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 0, "bogus": 1})
    assert main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_physics_preconditions_revalidated(tmp_path):
    close = {"photon": {"center": 14.0, "wavenumber": 1.0}, "electron": {"center": 16.0}}
    cfg = write_config(tmp_path, packets=close)
    assert main(["evolve", "--config", str(cfg)]) == 2
    bad_json = tmp_path / "broken.json"
    bad_json.write_text("{not json")
    assert main(["evolve", "--config", str(bad_json)]) == 2
    wrong = write_config(tmp_path, "w.json", command="liq-witness")
    assert main(["evolve", "--config", str(wrong)]) == 2


def test_edge_abort_is_a_physics_abort(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 400, "snapshot_stride": 100})
    out = tmp_path / "out"
    assert main(["evolve", "--config", str(cfg), "--out", str(out)]) == 3
    m = manifest(out)
    assert m["status"] == "physics-abort" and "wall" in m["error"]
    names = {f["path"] for f in m["files"]}
    assert {"error.json", "diagnostics.csv", "density_00000.pgm"} <= names


def test_io_failures(tmp_path):
    assert main(["evolve", "--config", str(tmp_path / "missing.json")]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path, run={"n_steps": 0})
    assert main(["evolve", "--config", str(cfg), "--out", str(blocker / "sub")]) == 4


def test_embedded_config_ignores_workers_and_directory():
    a = RunConfig(command="evolve", run={"workers": 1}, output={"directory": "a"}, **SMALL)
    b = RunConfig(command="evolve", run={"workers": 8}, output={"directory": "b"}, **SMALL)
    assert a.embedded() == b.embedded()


def test_pair_trajectories_are_deterministic_across_workers(tmp_path):
    outs = []
    for k, workers in enumerate((1, 1, 4)):
        cfg = write_config(tmp_path, f"c{k}.json", run={"n_steps": 40, "workers": workers}, ensemble={"n_samples": 50, "seed": 3})
        out = tmp_path / f"out{k}"
        assert main(["pair-trajectories", "--config", str(cfg), "--out", str(out)]) == 0
        outs.append(checksums(out))
    assert outs[0] == outs[1] == outs[2]


def test_seed_override_changes_samples(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 2}, ensemble={"n_samples": 20})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pair-trajectories", "--config", str(cfg), "--out", str(a), "--seed", "1"]) == 0
    assert main(["pair-trajectories", "--config", str(cfg), "--out", str(b), "--seed", "2"]) == 0
    assert checksums(a)["pairs.csv"] != checksums(b)["pairs.csv"]


def test_ensemble_writes_one_row_per_pair(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 20}, ensemble={"n_samples": 100, "null_reps": 50})
    out = tmp_path / "out"
    assert main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "pairs.csv").read_text().strip().splitlines()
    assert rows[0].startswith("pair,") and len(rows) == 101
    traj = (out / "trajectories.csv").read_text().strip().splitlines()
    assert len(traj) == 1 + 100 * 21
    report = json.loads((out / "ensemble_report.json").read_text())["data"]
    assert sum(report["classifications"].values()) == 100


def test_multitime_slice(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 4, "tau": 1.0})
    out = tmp_path / "out"
    assert main(["multitime-slice", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "multitime_density.pgm").exists()


def test_liq_witness(tmp_path):
    cfg = write_config(tmp_path, liq={"hbar": 0.1})
    out = tmp_path / "out"
    assert main(["liq-witness", "--config", str(cfg), "--out", str(out)]) == 0
    data = json.loads((out / "witness.json").read_text())["data"]
    assert data["min_rho_u0"] < 0
    assert abs(data["location"] - data["oracle_location"]) <= 0.05


def test_liq_scaling_small(tmp_path):
    cfg = write_config(tmp_path, liq={"hbar_list": [0.4, 0.2, 0.1, 0.05], "refine_continuity": False})
    out = tmp_path / "out"
    assert main(["liq-scaling", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "scaling.csv").read_text().strip().splitlines()
    assert len(rows) == 5


def test_liq_scaling_rejects_narrow_hbar_range(tmp_path):
    cfg = write_config(tmp_path, liq={"hbar_list": [0.2, 0.15, 0.1, 0.05]})
    assert main(["liq-scaling", "--config", str(cfg)]) == 2


@pytest.mark.skipif(shutil.which("mtdirac") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = write_config(tmp_path, run={"n_steps": 0})
    proc = subprocess.run(
        ["mtdirac", "evolve", "--config", str(cfg), "--out", str(tmp_path / "o")], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "ok"
