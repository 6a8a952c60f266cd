import argparse
from typing import Any, Dict

from loguru import logger

from pddf.cli.common import held_out_spec, load_config, resolve_oracle
from pddf.core.errors import StorageError
from pddf.services.sampler import build_dataset, build_held_out, dataset_header
from pddf.storage.checkpoint import CHECKPOINT_MAGIC, read_checkpoint_header
from pddf.storage.dataset_file import DATASET_MAGIC, read_dataset_header, write_dataset


def extract_data(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Label oriented points against a mesh or analytic shape and write them
    to a dataset file, optionally with a held-out file.
    """
    config = load_config(args)
    oracle = resolve_oracle(args.mesh)
    samples = build_dataset(oracle, config.dataset, args.out)

    summary: Dict[str, Any] = {
        "command": "extract-data",
        "out": args.out,
        "count": len(samples),
        "counts": {t.value: n for t, n in samples.counts().items()},
    }
    if args.held_out:
        held_out = build_held_out(oracle, config.dataset, counts=held_out_spec(config.dataset, args.held_out_fraction))
        write_dataset(args.held_out, held_out, {**dataset_header(oracle, config.dataset), "held_out": True})
        logger.info(f"Wrote {len(held_out)} held-out samples to {args.held_out}")
        summary["held_out"] = {"out": args.held_out, "count": len(held_out)}
    return summary


def info(args: argparse.Namespace) -> Dict[str, Any]:
    """Print the header of a dataset or checkpoint file."""
    try:
        with open(args.path, "rb") as f:
            magic = f.read(max(len(DATASET_MAGIC), len(CHECKPOINT_MAGIC)))
    except OSError as e:
        raise StorageError(f"Cannot read {args.path}: {e}") from e

    if magic.startswith(DATASET_MAGIC):
        return {"command": "info", "kind": "dataset", "header": read_dataset_header(args.path)}
    if magic.startswith(CHECKPOINT_MAGIC):
        return {"command": "info", "kind": "checkpoint", "header": read_checkpoint_header(args.path)}
    raise StorageError(f"{args.path} is neither a dataset nor a checkpoint")


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("extract-data", parents=[common], help="Generate a training dataset")
    parser.add_argument("--mesh", required=True, help="OBJ path or analytic:<shape>")
    parser.add_argument("--out", required=True, help="Dataset output path")
    parser.add_argument("--held-out", help="Optional held-out dataset path")
    parser.add_argument("--held-out-fraction", type=float, default=0.1,
                        help="Held-out counts as a fraction of the training counts")
    parser.set_defaults(handler=extract_data)

    parser = subparsers.add_parser("info", parents=[common], help="Show a dataset or checkpoint header")
    parser.add_argument("path")
    parser.set_defaults(handler=info)
