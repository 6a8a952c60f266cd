import numpy as np
from loguru import logger

from pddf.core.errors import StorageError


def write_xyz(path: str, points: np.ndarray) -> None:
    """One "x y z" line per point, shortest round-trip float repr."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist()]
    try:
        with open(path, "w", encoding="ascii") as f:
            f.writelines(lines)
    except OSError as e:
        logger.error(f"Error writing point cloud {path}: {str(e)}")
        raise StorageError(f"Cannot write point cloud {path}: {e}") from e


def read_xyz(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="ascii") as f:
            rows = [line.split() for line in f if line.strip()]
    except OSError as e:
        raise StorageError(f"Cannot read point cloud {path}: {e}") from e
    try:
        return np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    except ValueError as e:
        raise StorageError(f"Malformed point cloud {path}: {e}") from e


def write_udf_table(path: str, points: np.ndarray, udf: np.ndarray, v_star: np.ndarray, confident: np.ndarray) -> None:
    """One "x y z udf vx vy vz confident" line per query point."""
    rows = zip(np.asarray(points, dtype=np.float64).tolist(), np.asarray(udf, dtype=np.float64).tolist(),
               np.asarray(v_star, dtype=np.float64).tolist(), np.asarray(confident).tolist())
    lines = [
        f"{p[0]!r} {p[1]!r} {p[2]!r} {d!r} {s[0]!r} {s[1]!r} {s[2]!r} {int(c)}\n"
        for p, d, s, c in rows
    ]
    try:
        with open(path, "w", encoding="ascii") as f:
            f.writelines(lines)
    except OSError as e:
        logger.error(f"Error writing UDF table {path}: {str(e)}")
        raise StorageError(f"Cannot write UDF table {path}: {e}") from e
