"""Byte-stable writers for density images, CSV tables and JSON records."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """Shortest round-tripping text for a float (``repr`` is exact and stable)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path: Path, obj) -> Path:
    path.write_text(dumps(obj))
    return path


def write_csv(path: Path, header: list[str], rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_grid_csv(path: Path, arr: np.ndarray) -> Path:
    """Raw 2-D array, one row per first index."""
    lines = [",".join(fmt(v) for v in row) for row in np.asarray(arr)]
    path.write_text("\n".join(lines) + "\n")
    return path


def pgm_bytes(rho: np.ndarray) -> bytes:
    """16-bit binary PGM of a density on a square grid.

    Pixel column ``x`` is the photon cell ``i``, pixel row ``y`` counts the
    electron cell ``j`` downward from the top, so ``j`` grows upward. Values
    map linearly from ``[0, max rho]`` onto ``[0, 65535]``.
    """
    rho = np.asarray(rho, dtype=float)
    top = rho.max() if rho.size else 0.0
    scaled = np.zeros(rho.shape) if not top > 0 else np.clip(rho / top, 0.0, 1.0) * 65535.0
    img = np.rint(scaled).astype(">u2").T[::-1]
    h, w = img.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise ValueError("not a 16-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w)


def write_pgm(path: Path, rho: np.ndarray) -> Path:
    path.write_bytes(pgm_bytes(rho))
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
