import argparse
import os
from typing import Any, Dict

import numpy as np

from pddf.cli.common import add_camera_flags, camera_from_args, load_config, parse_maps, resolve_evaluator
from pddf.services.compose import build_scene
from pddf.services.renderer import render_all
from pddf.storage.images import write_images
from pddf.storage.scene_file import load_scene


def _render(evaluator, args: argparse.Namespace, config, command: str) -> Dict[str, Any]:
    camera = camera_from_args(args, config.camera)
    images = render_all(evaluator, camera, parse_maps(args.maps))
    files = write_images(images, args.out)
    summary: Dict[str, Any] = {"command": command, "files": files, "width": camera.width, "height": camera.height}
    if images.xi is not None:
        summary["visible_pixels"] = int(np.count_nonzero(images.xi >= camera.xi_threshold))
    return summary


def render(args: argparse.Namespace) -> Dict[str, Any]:
    config = load_config(args)
    return _render(resolve_evaluator(args.model, config), args, config, "render")


def compose_render(args: argparse.Namespace) -> Dict[str, Any]:
    config = load_config(args)
    scene = build_scene(load_scene(args.scene), config.compose, base_dir=os.path.dirname(args.scene) or ".")
    return _render(scene, args, config, "compose-render")


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("render", parents=[common], help="Render depth, visibility and normal maps")
    parser.add_argument("--model", required=True, help="Checkpoint, analytic:<shape> or scene:<file>")
    parser.add_argument("--out", required=True, help="Output path stem")
    add_camera_flags(parser)
    parser.set_defaults(handler=render)

    parser = subparsers.add_parser("compose-render", parents=[common], help="Render a composed scene")
    parser.add_argument("--scene", required=True, help="Scene JSON file")
    parser.add_argument("--out", required=True, help="Output path stem")
    add_camera_flags(parser)
    parser.set_defaults(handler=compose_render)
