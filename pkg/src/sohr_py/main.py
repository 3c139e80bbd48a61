import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from sohr_py.config import ConfigError, RunConfig, load_config
from sohr_py.lab import SohrLab

"""
Command line entry point. Every subcommand maps onto one SohrLab.cmd_* operation.

Exit codes
    0 success
    1 validation failure (a FAIL row in a report, a failed parity / positivity / stability check)
    2 invalid configuration
"""

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2

COMMANDS = ("coeffs", "profiles", "ibm", "hydro", "dispersion", "validate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sohrpy", description='''
        Alignment model laboratory with self rotation: coefficient tables, equilibrium profiles, particle
        simulations, macroscopic solvers and dispersion analysis.''')

    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"Run the {name} command")
        p.add_argument("-c", "--config", type=str, required=False,
                       help="Plain text configuration file with [section] headers. Defaults are used if omitted.")
        p.add_argument("-o", "--out", type=str, required=False,
                       help="Output directory, overrides general.out_dir")
        p.add_argument("-s", "--serial", action="store_true",
                       help="Deterministic mode, no worker processes and no thread pools")
        p.add_argument("--seed", type=int, required=False,
                       help="Seed of the particle noise, overrides general.seed")
        p.add_argument("-v", "--verbose", action="store_true",
                       help="Enable Logging at Debug Level")
        if name == "validate":
            p.add_argument("-t", "--tags", type=str, required=False,
                           help="Comma separated subset of validation tags")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict[str, object]]:
    """
    Command line flags as section overrides for the configuration.
    """
    general = {}
    if args.out is not None:
        general["out_dir"] = args.out
    if args.serial:
        general["serial"] = True
    if args.seed is not None:
        general["seed"] = args.seed
    if args.verbose:
        general["log_level"] = logging.DEBUG

    overrides: Dict[str, Dict[str, object]] = {"general": general}
    if getattr(args, "tags", None):
        overrides["validate"] = {"tags": args.tags}
    return overrides


def run_command(lab: SohrLab, command: str) -> int:
    """
    Execute one command and translate its outcome into an exit code.
    """
    commands: Dict[str, Callable[[], object]] = {
        "coeffs": lab.cmd_coeffs,
        "profiles": lab.cmd_profiles,
        "ibm": lab.cmd_ibm,
        "hydro": lab.cmd_hydro,
        "dispersion": lab.cmd_dispersion,
        "validate": lab.cmd_validate,
    }
    res = commands[command]()
    files: List[str] = res[0] if isinstance(res, tuple) else res
    for f in files:
        lab.logger.info(f"Wrote {f}")

    # coeffs, dispersion and validate report a pass flag
    if isinstance(res, tuple) and isinstance(res[1], bool) and not res[1]:
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """
    Everything necessary in the main function to be exposed in the package
    """
    args = build_parser().parse_args(argv)

    try:
        config: RunConfig = load_config(args.config, overrides_from_args(args))
    except ConfigError as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG

    lab = SohrLab(config)
    lab.register_interrupts()
    try:
        return run_command(lab, args.command)
    except ConfigError as e:
        lab.logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    finally:
        lab.cleanup()


if __name__ == "__main__":
    sys.exit(main())
