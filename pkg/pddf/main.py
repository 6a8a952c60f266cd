import argparse
import json
import math
import sys
from typing import Any, List, Optional

import numpy as np
import torch
from loguru import logger

from pddf import __version__
from pddf.cli import data, extract, render, train, validate
from pddf.cli.common import common_parser
from pddf.core.config import settings
from pddf.core.errors import PddfError
from pddf.core.logging import setup_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pddf",
        description="Probabilistic directed distance fields: data, fitting, rendering and extraction",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = common_parser()

    # Include command groups
    for module in (data, train, render, extract, validate):
        module.register(subparsers, common)
    return parser


def configure_runtime(args: argparse.Namespace) -> None:
    """Logging, thread cap and deterministic kernels for one CLI run."""
    setup_logging(args.log_level)
    threads = args.threads or settings.THREADS
    torch.set_num_threads(max(1, threads))
    torch.use_deterministic_algorithms(settings.DETERMINISTIC)
    logger.debug(f"Running {args.command} with {threads} threads")


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def _clean(value: Any) -> Any:
    # JSON has no NaN or infinity
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and print its JSON summary.

    Returns:
        Exit code: 0 on success, 2 for usage errors, 3 for I/O, 4 for
        numerical failures, 1 for failed validation
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    configure_runtime(args)
    try:
        summary = args.handler(args)
        code = 0
    except PddfError as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        summary = {"command": args.command, "error": str(e), **e.details}
        code = e.exit_code

    sys.stdout.write(json.dumps(_clean(summary), sort_keys=True, default=_json_default) + "\n")
    sys.stdout.flush()
    return code
