from __future__ import annotations

import argparse
import logging
import logging.handlers
import sys
from pathlib import Path

from .config import load_pipeline_config, load_sim_config, runtime_dir
from .models import ConfigError, DataError, Measure, RollupLevel
from .service import PipelineService, run_simulation

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    formatter = logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s")
    handler = logging.handlers.RotatingFileHandler(
        directory / "lfquant.log",
        maxBytes=5 * 1024 * 1024,
        backupCount=5,
        encoding="utf-8",
    )
    handler.setFormatter(formatter)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    logging.basicConfig(level=logging.INFO, handlers=[handler, console], force=True)


def _shared_options() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int)
    shared.add_argument("--permutations", type=int)
    shared.add_argument("--fdr-threshold", type=float)
    shared.add_argument("--alpha", type=float)
    shared.add_argument(
        "--level", action="append", choices=[level.value for level in RollupLevel]
    )
    shared.add_argument(
        "--measure", action="append", choices=[measure.value for measure in Measure]
    )
    shared.add_argument("--out", type=Path)
    return shared


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(
        prog="lfquant",
        description="Label-free LC-MS/MS quantification",
        epilog=(
            "Configuration is a KEY=VALUE file: LFQ_* keys for pipeline commands, "
            "SIM_* keys for simulate. Environment variables override the file and "
            "flags override both."
        ),
    )
    parser.add_argument("--config", type=Path)
    subparsers = parser.add_subparsers(dest="command", required=True)
    shared = _shared_options()
    subparsers.add_parser("simulate", parents=[shared], help="write a synthetic dataset")
    subparsers.add_parser("quantify", parents=[shared], help="species count and abundance matrices")
    subparsers.add_parser("rollup", parents=[shared], help="filtered, normalized matrices per level")
    subparsers.add_parser("test", parents=[shared], help="protein tau, p-values and q-values")
    subparsers.add_parser("diagnose", parents=[shared], help="interference and semi-tryptic checks")
    subparsers.add_parser("evaluate", parents=[shared], help="ROC, AUC and confusion tables")
    return parser


def pipeline_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides = {}
    for attribute, key in (
        ("seed", "LFQ_SEED"),
        ("permutations", "LFQ_PERMUTATIONS"),
        ("fdr_threshold", "LFQ_FDR_THRESHOLD"),
        ("alpha", "LFQ_ALPHA"),
    ):
        value = getattr(args, attribute)
        if value is not None:
            overrides[key] = str(value)
    if args.level:
        overrides["LFQ_LEVELS"] = ",".join(args.level)
    if args.measure:
        overrides["LFQ_MEASURES"] = ",".join(args.measure)
    if args.out is not None:
        overrides["LFQ_OUT_DIR"] = str(args.out.absolute())
    return overrides


def sim_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides = {}
    if args.seed is not None:
        overrides["SIM_SEED"] = str(args.seed)
    if args.out is not None:
        overrides["SIM_OUT_DIR"] = str(args.out.absolute())
    return overrides


def run(args: argparse.Namespace) -> None:
    configure_logging(runtime_dir(args.config))
    if args.command == "simulate":
        config = load_sim_config(args.config, sim_overrides(args))
        written = run_simulation(config)
        print(f"Simulated dataset written: {config.out_dir} ({len(written)} files)")
        return

    config = load_pipeline_config(args.config, pipeline_overrides(args))
    service = PipelineService(config)
    written = getattr(service, args.command)()
    print(f"{args.command} complete: {len(written)} files under {config.out_dir}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as exc:
        LOGGER.error("Configuration error command=%s error=%s", args.command, exc)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        LOGGER.error("Data error command=%s error=%s", args.command, exc)
        return EXIT_DATA
    return EXIT_OK
