import argparse
from typing import Any, Dict

import numpy as np

from pddf.cli.common import grid_points, load_config, resolve_evaluator
from pddf.services.extract import chamfer_f_score, fit_vstar, sample_point_cloud, udf_query
from pddf.storage.point_cloud import read_xyz, write_udf_table, write_xyz


def extract_udf(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Fit the closest-direction field and tabulate UDF values at query points.
    """
    config = load_config(args)
    evaluator = resolve_evaluator(args.model, config)
    vstar_config = config.vstar
    if args.iterations is not None:
        vstar_config = vstar_config.model_copy(update={"iterations": args.iterations})
    vstar = fit_vstar(evaluator, vstar_config, np.random.default_rng(vstar_config.seed))

    points = read_xyz(args.points) if args.points else grid_points(args.grid)
    result = udf_query(evaluator, vstar, points, config.compose)
    write_udf_table(args.out, points, result.udf, result.v_star, result.confident)
    return {
        "command": "extract-udf",
        "out": args.out,
        "points": len(points),
        "mean_udf": float(result.udf.mean()),
        "confident_fraction": float(result.confident.mean()),
    }


def sample_pc(args: argparse.Namespace) -> Dict[str, Any]:
    config = load_config(args)
    evaluator = resolve_evaluator(args.model, config)
    update = {"compose": config.compose}
    if args.n is not None:
        update["n_points"] = args.n
    if args.hops is not None:
        update["hops"] = args.hops
    pc_config = config.point_cloud.model_copy(update=update)
    cloud = sample_point_cloud(evaluator, pc_config, np.random.default_rng(config.seed))
    write_xyz(args.out, cloud.points)
    return {
        "command": "sample-pc",
        "out": args.out,
        "points": len(cloud),
        "min_xi": float(cloud.xi.min()),
        "mean_xi": float(cloud.xi.mean()),
    }


def metrics(args: argparse.Namespace) -> Dict[str, Any]:
    scores = chamfer_f_score(read_xyz(args.pred), read_xyz(args.ref), tau=args.tau, method=args.method)
    return {"command": "metrics", "tau": args.tau, **scores._asdict()}


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("extract-udf", parents=[common], help="Fit v* and tabulate the UDF")
    parser.add_argument("--model", required=True, help="Checkpoint, analytic:<shape> or scene:<file>")
    parser.add_argument("--out", required=True, help="Output table path")
    parser.add_argument("--points", help="XYZ file of query points (default: a grid)")
    parser.add_argument("--grid", type=int, default=16, help="Grid resolution per axis")
    parser.add_argument("--iterations", type=int, help="Override the v* iteration count")
    parser.set_defaults(handler=extract_udf)

    parser = subparsers.add_parser("sample-pc", parents=[common], help="Sample a point cloud from a field")
    parser.add_argument("--model", required=True, help="Checkpoint, analytic:<shape> or scene:<file>")
    parser.add_argument("--out", required=True, help="XYZ output path")
    parser.add_argument("--n", type=int, help="Number of points")
    parser.add_argument("--hops", type=int, help="Projection hops")
    parser.set_defaults(handler=sample_pc)

    parser = subparsers.add_parser("metrics", parents=[common], help="Chamfer distance and F-scores")
    parser.add_argument("--pred", required=True, help="Predicted XYZ file")
    parser.add_argument("--ref", required=True, help="Reference XYZ file")
    parser.add_argument("--tau", type=float, default=1e-4, help="Squared-distance threshold")
    parser.add_argument("--method", choices=["auto", "brute", "indexed"], default="auto")
    parser.set_defaults(handler=metrics)
