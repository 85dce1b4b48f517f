"""Command-line entry point.

Examples::

    lattice-cavity transmission --preset fig3 --out out/fig3
    lattice-cavity propagate my.toml --set numerics.t_final_ms=50
    lattice-cavity run my.toml --check
    lattice-cavity presets
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, apply_overrides, parse_config
from .runner import EXIT_CONFIG, EXIT_IO, PRESETS, load_preset, run

MODES = {
    "bandmap": "bandmap",
    "transmission": "transmission",
    "propagate": "propagate",
    "revival-sweep": "revival_sweep",
    "box-oracle": "box_oracle",
}


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="TOML configuration file")
    p.add_argument("--preset", help=f"shipped configuration ({', '.join(PRESETS)}, fig2)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key, e.g. physics.w_z_um=35")
    p.add_argument("--out", help="output directory (default: output.directory)")
    p.add_argument("--check", action="store_true", help="run the dt/dz convergence gates only")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice-cavity",
                                     description="Matter waves in a finite, time-dependent optical lattice.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_args(sub.add_parser("run", help="run a configuration in its own mode"))
    for name in MODES:
        _add_run_args(sub.add_parser(name, help=f"run in {name} mode"))
    sub.add_parser("presets", help="list shipped presets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        for name in PRESETS:
            cfg = load_preset(name)
            print(f"{name:10s} {cfg.mode:14s} {cfg.name}")
        return 0
    try:
        if args.preset:
            config = load_preset(args.preset)
        elif args.config:
            try:
                with open(args.config) as f:
                    text = f.read()
            except OSError as exc:
                logging.error("cannot read %s: %s", args.config, exc)
                return EXIT_IO
            config = parse_config(text)
        else:
            logging.error("give a configuration file or --preset")
            return EXIT_CONFIG
        overrides = list(args.overrides)
        if args.command in MODES:
            overrides.append(f'mode="{MODES[args.command]}"')
        config = apply_overrides(config, overrides)
    except ConfigError as exc:
        logging.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return run(config, args.out, check_only=args.check, workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
