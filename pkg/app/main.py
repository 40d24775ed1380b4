import argparse
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from app.cli.commands import cmd_classical, cmd_correspondence, cmd_quantum, cmd_verify
from app.core.config import Settings, load_settings
from app.core.exceptions import LabError, generic_exception_handler, lab_exception_handler
from app.core.logging_config import setup_logging

COMMANDS: dict[str, Callable[[Settings, Path, str | None], int]] = {
    "classical": cmd_classical,
    "quantum": cmd_quantum,
    "correspondence": cmd_correspondence,
    "verify": cmd_verify,
}

DESCRIPTION = """
Desk-scale laboratory for the Nelson model and its particle-field limit.
- classical: particle-field trajectory, energy drift, Gronwall envelope
- quantum: coherent-state evolution at one hbar with observables
- correspondence: hbar sweep against the classical flow, characteristic residuals
- verify: assumption checks and the estimate certificate
Outputs are CSV/JSON files carrying the configuration hash in '#' header lines.
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nelson-lab",
        description=DESCRIPTION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, handler in COMMANDS.items():
        cmd = sub.add_parser(name, help=(handler.__doc__ or "").splitlines()[0])
        cmd.add_argument("--config", help="INI configuration file (built-in defaults when omitted)")
        cmd.add_argument("--out", type=Path, default=None, help=f"output directory (default results/{name})")
        cmd.add_argument("--seed", type=int, default=None, help="override [run] seed")
        cmd.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger = setup_logging(args.log_level or "INFO")

    try:
        settings = load_settings(args.config) if args.config else Settings()
        if args.seed is not None:
            settings.run.seed = args.seed
        if args.log_level is None:
            logger = setup_logging(settings.run.log_level)
        out = args.out or Path("results") / args.subcommand
        status = COMMANDS[args.subcommand](settings, out, args.config)
    except LabError as e:
        return lab_exception_handler(e)
    except Exception as e:
        return generic_exception_handler(e)

    logger.info(f"{args.subcommand} finished with exit status {status}")
    return status


if __name__ == "__main__":
    sys.exit(main())
