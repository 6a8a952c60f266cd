import argparse
import os
from typing import Optional

import numpy as np

from pddf.core.config import PipelineConfig, load_pipeline_config
from pddf.core.errors import ConfigError
from pddf.models.geometry import DEFAULT_BOX, BoundingBox, Vec3, parse_analytic
from pddf.models.render import Camera
from pddf.models.samples import DatasetSpec, SampleType
from pddf.services.compose import build_scene
from pddf.services.evaluators import AnalyticEvaluator, FieldEvaluator, NetworkEvaluator
from pddf.services.sampler import AnalyticOracle, GroundTruthOracle, MeshOracle
from pddf.storage.checkpoint import load_checkpoint
from pddf.storage.mesh_file import load_obj
from pddf.storage.scene_file import load_scene

ANALYTIC_PREFIX = "analytic:"
SCENE_PREFIX = "scene:"


def common_parser() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="TOML pipeline configuration")
    parser.add_argument("--seed", type=int, help="Root seed; overrides the configuration")
    parser.add_argument("--threads", type=int, help="Worker thread cap")
    parser.add_argument("--log-level", help="Logging level")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    return load_pipeline_config(args.config, args.seed)


def parse_vec(text: str) -> Vec3:
    try:
        parts = [float(c) for c in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"Expected 'x,y,z', got '{text}'") from e
    if len(parts) != 3:
        raise ConfigError(f"Expected 'x,y,z', got '{text}'")
    return (parts[0], parts[1], parts[2])


def resolve_oracle(source: str, box: BoundingBox = DEFAULT_BOX) -> GroundTruthOracle:
    """
    Ground truth from "analytic:<shape>" or an OBJ path.
    """
    if source.startswith(ANALYTIC_PREFIX):
        return AnalyticOracle(parse_analytic(source[len(ANALYTIC_PREFIX):]), box)
    return MeshOracle(load_obj(source), name=os.path.basename(source))


def resolve_evaluator(source: str, config: Optional[PipelineConfig] = None) -> FieldEvaluator:
    """
    Field from "analytic:<shape>", "scene:<file.json>" or a checkpoint path.
    """
    if source.startswith(ANALYTIC_PREFIX):
        return AnalyticEvaluator(parse_analytic(source[len(ANALYTIC_PREFIX):]))
    if source.startswith(SCENE_PREFIX):
        path = source[len(SCENE_PREFIX):]
        params = config.compose if config is not None else None
        return build_scene(load_scene(path), params, base_dir=os.path.dirname(path) or ".")
    model, _ = load_checkpoint(source)
    model.eval()
    return NetworkEvaluator(model)


def add_camera_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--camera", help="Camera position 'x,y,z'")
    parser.add_argument("--look-at", help="Look-at point 'x,y,z'")
    parser.add_argument("--up", help="Up vector 'x,y,z'")
    parser.add_argument("--fov", type=float, help="Vertical field of view in degrees")
    parser.add_argument("--width", type=int)
    parser.add_argument("--height", type=int)
    parser.add_argument("--maps", default="depth,xi,normals",
                        help="Comma-separated maps: depth, xi, normals, curvature")


def camera_from_args(args: argparse.Namespace, base: Camera) -> Camera:
    update = {}
    if args.camera:
        update["position"] = parse_vec(args.camera)
    if args.look_at:
        update["look_at"] = parse_vec(args.look_at)
    if args.up:
        update["up"] = parse_vec(args.up)
    if args.fov is not None:
        update["vertical_fov"] = args.fov
    if args.width is not None:
        update["width"] = args.width
    if args.height is not None:
        update["height"] = args.height
    try:
        return Camera.model_validate({**base.model_dump(), **update})
    except ValueError as e:
        raise ConfigError(f"Invalid camera: {e}") from e


def parse_maps(text: str):
    maps = tuple(m.strip() for m in text.split(",") if m.strip())
    unknown = [m for m in maps if m not in ("depth", "xi", "normals", "curvature")]
    if unknown:
        raise ConfigError(f"Unknown maps {unknown}")
    return maps


def parse_types(text: Optional[str]):
    if not text:
        return None
    try:
        return [SampleType(t.strip().upper()) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"Unknown sample type in '{text}'") from e


def held_out_spec(spec: DatasetSpec, fraction: float) -> dict:
    """Per-type held-out counts as a fraction of the training counts."""
    return {t: max(1, int(round(n * fraction))) if n else 0 for t, n in spec.counts.items()}


def grid_points(resolution: int, box: BoundingBox = DEFAULT_BOX) -> np.ndarray:
    """Cell-centred grid of resolution^3 points inside the box."""
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    axes = [lo[i] + (np.arange(resolution) + 0.5) / resolution * (hi[i] - lo[i]) for i in range(3)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
