import argparse
from typing import Any, Dict

from pddf.cli.common import load_config, resolve_evaluator
from pddf.core.errors import ValidationFailed
from pddf.services.validators import CHECKS, run_validation


def validate(args: argparse.Namespace) -> Dict[str, Any]:
    """Run property checks; a failed check exits with code 1."""
    config = load_config(args)
    validation = config.validation
    if args.samples is not None:
        validation = validation.model_copy(update={"n_samples": args.samples})
    evaluator = resolve_evaluator(args.model, config)
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    reports = run_validation(evaluator, checks, validation)

    summary = {
        "command": "validate",
        "passed": all(r.passed for r in reports),
        "reports": [r.model_dump() for r in reports],
    }
    if not summary["passed"]:
        failed = [r.name for r in reports if not r.passed]
        raise ValidationFailed(f"Checks failed: {', '.join(failed)}", details=summary)
    return summary


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("validate", parents=[common], help="Check geometric field properties")
    parser.add_argument("--model", required=True, help="Checkpoint, analytic:<shape> or scene:<file>")
    parser.add_argument("--checks", default=",".join(CHECKS), help=f"Comma-separated subset of {list(CHECKS)}")
    parser.add_argument("--samples", type=int, help="Samples per check")
    parser.set_defaults(handler=validate)
