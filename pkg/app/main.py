"""
Trace FEM experiment runner.

Command-line entry point: ``python -m app.main --experiment 1 --h 1/4 --dt 1/16``.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from app.config.experiments import get_experiment_ids
from app.config.settings import get_settings
from app.models.request import ExperimentConfig, TimeScheme
from app.services.orchestration_service import experiment_orchestrator, parse_sweep_file

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

BOOLEAN_KEYS = ("verbose", "dump_mesh", "dump_matrix", "dump_band")
TRUE_WORDS = {"1", "true", "yes", "on"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracefem",
        description="Trace FEM for transport-diffusion on evolving surfaces: reproduce Experiments 1-5.",
        epilog="Numbers accept fractions, e.g. --h 1/8. Flags override values from --config.",
    )
    parser.add_argument("--experiment", type=int, choices=get_experiment_ids(), help="experiment number")
    parser.add_argument("--h", help="background cube side length")
    parser.add_argument("--dt", help="time step")
    parser.add_argument("--T", dest="T", help="final time (experiment default if omitted)")
    parser.add_argument("--nu", help="diffusion coefficient (default 1)")
    parser.add_argument("--scheme", choices=[s.value for s in TimeScheme], help="time scheme (default bdf2)")
    parser.add_argument("--sweep", help="file with one 'h dt' cell per line")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--snapshot-every", dest="snapshot_every", type=int, help="VTK surface snapshot every k steps")
    parser.add_argument("--config", help="key=value file with defaults for the flags above")
    parser.add_argument("--verbose", action="store_const", const=True, help="debug logging")
    parser.add_argument("--dump-mesh", dest="dump_mesh", action="store_const", const=True, help="write mesh.vtk")
    parser.add_argument("--dump-matrix", dest="dump_matrix", action="store_const", const=True, help="write final-step matrix triplets")
    parser.add_argument("--dump-band", dest="dump_band", action="store_const", const=True, help="write final-step FMM band table")
    return parser


def merge_options(args: argparse.Namespace) -> Dict[str, Any]:
    """Config-file values overridden by explicit flags."""
    options: Dict[str, Any] = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise FileNotFoundError(f"no such file: {args.config}")
        for key, value in dotenv_values(args.config).items():
            options[key.strip().lower().replace("-", "_")] = value
        if "t" in options:
            options["T"] = options.pop("t")
    for key, value in vars(args).items():
        if key != "config" and value is not None:
            options[key] = value
    for key in BOOLEAN_KEYS:
        value = options.get(key)
        if isinstance(value, str):
            options[key] = value.strip().lower() in TRUE_WORDS
    return options


def build_config(options: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate merged options into an ExperimentConfig.

    A sweep takes h and dt from its cells; the first cell fills them here so
    the remaining settings can be validated up front.
    """
    values = {
        "experiment_id": options.get("experiment"),
        "h": options.get("h"),
        "dt": options.get("dt"),
        "T_final": options.get("T"),
        "nu": options.get("nu"),
        "scheme": options.get("scheme") or TimeScheme.BDF2,
        "output_dir": options.get("out") or get_settings().output_dir,
        "snapshot_every": options.get("snapshot_every", get_settings().snapshot_every),
        "dump_mesh": bool(options.get("dump_mesh")),
        "dump_matrix": bool(options.get("dump_matrix")),
        "dump_band": bool(options.get("dump_band")),
    }
    return ExperimentConfig(**values)


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else get_settings().log_level
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        force=True,
    )


def run_experiment_cli(argv: Optional[List[str]] = None) -> int:
    """
    Parse flags, run a single experiment or a sweep, and print the table rows.

    Returns:
        int: 0 on success, 1 on a runtime failure, 2 on invalid input
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        options = merge_options(args)
    except OSError as exc:
        parser.print_usage(sys.stderr)
        print(f"tracefem: error: cannot read config file: {exc}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(bool(options.get("verbose")))

    cells = None
    try:
        if options.get("sweep"):
            cells = parse_sweep_file(options["sweep"])
            options.setdefault("h", cells[0].h)
            options.setdefault("dt", cells[0].dt)
        if options.get("experiment") is None:
            raise ValueError("--experiment is required")
        config = build_config(options)
    except (ValidationError, ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"tracefem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if cells is not None:
            summaries = experiment_orchestrator.run_sweep(config, cells)
        else:
            summaries = [experiment_orchestrator.run_single(config)]
    except ValidationError as exc:
        parser.print_usage(sys.stderr)
        print(f"tracefem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.error(f"❌ Run failed: {exc}")
        return EXIT_RUNTIME

    for summary in summaries:
        print(summary.table_row())
    return EXIT_OK


def main() -> None:
    sys.exit(run_experiment_cli())


if __name__ == "__main__":
    main()
