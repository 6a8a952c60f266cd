import argparse
from typing import Any, Dict

import numpy as np
from loguru import logger

from pddf.cli.common import held_out_spec, load_config, parse_types, resolve_oracle
from pddf.core.errors import ConfigError, StorageError
from pddf.services.sampler import build_held_out, generate_dataset
from pddf.services.trainer import fit_shape, run_ablations
from pddf.storage.dataset_file import read_dataset


def _training_data(args: argparse.Namespace, config):
    if args.data:
        _, samples = read_dataset(args.data)
        held_out = read_dataset(args.held_out)[1] if args.held_out else None
        return samples, held_out
    oracle = resolve_oracle(args.mesh)
    samples = generate_dataset(oracle, config.dataset).astype(np.float32)
    held_out = build_held_out(oracle, config.dataset, counts=held_out_spec(config.dataset, args.held_out_fraction))
    return samples, held_out


def fit(args: argparse.Namespace) -> Dict[str, Any]:
    """Fit a field to a dataset file or to freshly generated samples."""
    config = load_config(args)
    samples, held_out = _training_data(args, config)
    _, report = fit_shape(samples, config.train, config.field, checkpoint_path=args.out, held_out=held_out)
    return {
        "command": "fit",
        "out": args.out,
        "iterations": report.iterations,
        "final_lr": report.final_lr,
        "lr_reductions": report.lr_reductions,
        "final_losses": report.history[-1] if report.history else {},
        "held_out": report.held_out,
    }


def ablate(args: argparse.Namespace) -> Dict[str, Any]:
    """Baseline and per-type data ablations, written as a CSV table."""
    config = load_config(args)
    samples, held_out = _training_data(args, config)
    if held_out is None:
        raise ConfigError("Ablation needs held-out samples (--held-out with --data)")
    table = run_ablations(samples, config.train, config.field, held_out, parse_types(args.types))
    try:
        table.to_csv(args.out)
    except OSError as e:
        logger.error(f"Error writing ablation table {args.out}: {str(e)}")
        raise StorageError(f"Cannot write {args.out}: {e}") from e
    rows = {f"{ablated}/{kind}": row for (ablated, kind), row in table.to_dict(orient="index").items()}
    return {"command": "ablate", "out": args.out, "table": rows}


def _add_source(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--mesh", help="OBJ path or analytic:<shape>; samples are generated in memory")
    source.add_argument("--data", help="Dataset file")
    parser.add_argument("--held-out", help="Held-out dataset file (with --data)")
    parser.add_argument("--held-out-fraction", type=float, default=0.1)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("fit", parents=[common], help="Fit a field to one shape")
    _add_source(parser)
    parser.add_argument("--out", required=True, help="Checkpoint output path")
    parser.set_defaults(handler=fit)

    parser = subparsers.add_parser("ablate", parents=[common], help="Data-type ablation experiment")
    _add_source(parser)
    parser.add_argument("--types", help="Comma-separated types to ablate (default: all)")
    parser.add_argument("--out", required=True, help="CSV output path")
    parser.set_defaults(handler=ablate)
