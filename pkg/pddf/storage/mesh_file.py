import os

import numpy as np
import trimesh
from loguru import logger

from pddf.core.errors import MeshFormatError, StorageError
from pddf.models.geometry import TriangleMesh


def load_obj(path: str, normalize: bool = True) -> TriangleMesh:
    """
    Load an OBJ file as a triangle mesh.

    Polygons are triangulated by the loader; normals and texture coordinates
    are ignored.

    Args:
        path: OBJ path
        normalize: Centre the bounding box and scale the longest side to 2

    Returns:
        Triangle mesh
    """
    if not os.path.isfile(path):
        raise StorageError(f"Mesh file not found: {path}")
    try:
        loaded = trimesh.load(path, file_type="obj", force="mesh", process=False)
    except Exception as e:
        logger.error(f"Error loading mesh {path}: {str(e)}")
        raise MeshFormatError(f"Cannot parse mesh {path}: {e}") from e

    if isinstance(loaded, trimesh.Scene):
        if not loaded.geometry:
            logger.warning(f"Mesh {path} has no faces")
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        loaded = loaded.dump(concatenate=True)

    mesh = TriangleMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces))
    logger.info(f"Loaded {path}: {len(mesh.vertices)} vertices, {len(mesh)} triangles")
    return mesh.normalized() if normalize else mesh


def write_obj(path: str, mesh: TriangleMesh) -> None:
    try:
        trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False).export(path, file_type="obj")
    except OSError as e:
        raise StorageError(f"Cannot write mesh {path}: {e}") from e


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> TriangleMesh:
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    return TriangleMesh(np.asarray(sphere.vertices), np.asarray(sphere.faces))
