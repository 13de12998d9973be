"""Command-line entry point ``roacert``.

Exit codes: 0 on success with a certified region (or when no
certification stage ran), 2 on success without a certificate, 1 on error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import RoaError
from .pipeline import StageError, load_config_file, resolve_config, run

EXIT_CERTIFIED = 0
EXIT_ERROR = 1
EXIT_UNCERTIFIED = 2

_STAGES_FOR = {
    "simulate": ("simulate",),
    "fit": ("fit",),
    "certify": ("certify",),
    "mc": ("mc",),
    "export": ("export",),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--resolution", type=int, help="scan grid points per dimension")
    common.add_argument("--system", help="builtin system: vdp, smib, tmib, three_machine")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    parser = argparse.ArgumentParser(
        prog="roacert",
        description="Certified inner approximations of regions of attraction from a Lyapunov "
        "function combined with a fitted converse Lyapunov function.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate the node grid and cache the converse function samples",
        "fit": "fit the Bernstein polynomial V1",
        "certify": "select the levels and verify every hypothesis",
        "mc": "validate the certified region against Monte Carlo simulations",
        "export": "write grid.csv and contour CSV files",
        "run": "run the stages listed in the configuration (default: all)",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else (logging.INFO if verbosity == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        raw = load_config_file(args.config) if args.config else {}
        base = args.config.parent if args.config else Path(".")
        overrides = {
            "system": args.system,
            "out": args.out,
            "seed": args.seed,
            "resolution": args.resolution,
            "stages": _STAGES_FOR.get(args.command),
        }
        cfg = resolve_config(raw, base_dir=base, overrides=overrides)
        report = run(cfg)
    except StageError as exc:
        print(f"roacert: error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        witness = getattr(exc.cause, "witness", None)
        if witness is not None:
            print(f"roacert: witness {json.dumps(witness)}", file=sys.stderr)
        return EXIT_ERROR
    except (RoaError, OSError) as exc:
        print(f"roacert: error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    out = cfg.out / "report.json"
    if "certified" in report:
        state = "certified" if report["certified"] else "not certified"
        cert = report["certificate"]
        print(
            f"{cfg.system}: {state}; gamma1={cert['gamma1']} gamma2={cert['gamma2']} "
            f"gamma3={cert['gamma3']} eta={cert['eta']}; report {out}"
        )
        if "validation" in report:
            v = report["validation"]
            print(f"monte carlo: {v['samples_inside']} samples inside, {v['violations']} violations")
        return EXIT_CERTIFIED if report["certified"] else EXIT_UNCERTIFIED
    print(f"{cfg.system}: stages {', '.join(report['stages_run'])} done; report {out}")
    return EXIT_CERTIFIED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
