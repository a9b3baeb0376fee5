"""Command line entry point: ``mtdirac <command> --config run.json``."""

from __future__ import annotations

import argparse
import json
import sys

import pydantic

from .config import COMMANDS, load_config
from .lattice import ValidationError
from .runner import EXIT_IO, EXIT_VALIDATION, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtdirac", description="Electron-photon multi-time lattice simulations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override ensemble.seed")
    p.add_argument("--out", help="override output.directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.seed, args.out)
    except OSError as exc:
        print(f"mtdirac: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (pydantic.ValidationError, ValidationError, ValueError) as exc:
        # json.JSONDecodeError is a ValueError too
        print(f"mtdirac: invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    manifest, code = run(cfg)
    status = {"status": manifest.status, "directory": str(manifest.directory), "files": len(manifest.files)}
    if manifest.error:
        status["error"] = manifest.error
    print(json.dumps(status, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
