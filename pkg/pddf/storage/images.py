from typing import List

import numpy as np
from loguru import logger
from PIL import Image

from pddf.core.errors import ImageFormatError, StorageError
from pddf.models.render import RenderedImages


def write_pfm(path: str, image: np.ndarray) -> None:
    """
    Write a float image as little-endian PFM (scale -1.0).

    Args:
        path: Output path
        image: (H, W) for "Pf" or (H, W, 3) for "PF"
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise ImageFormatError(f"PFM needs (H, W) or (H, W, 3), got {image.shape}")
    height, width = image.shape[:2]
    # PFM rows run bottom to top
    data = np.flipud(image).astype("<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(tag + b"\n")
            f.write(f"{width} {height}\n".encode("ascii"))
            f.write(b"-1.0\n")
            f.write(data)
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        raise StorageError(f"Cannot write {path}: {e}") from e


def read_pfm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            tag = f.readline().rstrip()
            dims = f.readline().split()
            scale = float(f.readline())
            data = f.read()
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e
    except ValueError as e:
        raise ImageFormatError(f"Malformed PFM header in {path}: {e}") from e

    if tag == b"Pf":
        channels = 1
    elif tag == b"PF":
        channels = 3
    else:
        raise ImageFormatError(f"{path} is not a PFM file")
    try:
        width, height = int(dims[0]), int(dims[1])
    except (IndexError, ValueError) as e:
        raise ImageFormatError(f"Malformed PFM dimensions in {path}") from e

    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels * 4
    if len(data) != expected:
        raise ImageFormatError(f"PFM {path} holds {len(data)} bytes, expected {expected}")
    image = np.frombuffer(data, dtype=dtype).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(image.reshape(shape)).copy()


def encode_normals(normals: np.ndarray) -> np.ndarray:
    """
    Map unit normals to 8-bit RGB with (n + 1) / 2 and round-half-up.
    NaN rows become black.
    """
    normals = np.asarray(normals, dtype=np.float64)
    valid = np.all(np.isfinite(normals), axis=-1)
    safe = np.where(valid[..., None], normals, -1.0)
    rgb = np.floor((safe + 1.0) / 2.0 * 255.0 + 0.5)
    rgb = np.clip(rgb, 0, 255).astype(np.uint8)
    rgb[~valid] = 0
    return rgb


def write_normals_png(path: str, normals: np.ndarray) -> None:
    try:
        Image.fromarray(encode_normals(normals), mode="RGB").save(path, format="PNG")
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        raise StorageError(f"Cannot write {path}: {e}") from e


def read_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e


def write_images(images: RenderedImages, stem: str) -> List[str]:
    """
    Write every map present in ``images`` next to ``stem``.

    Returns:
        Written paths, in a fixed order
    """
    written = []
    if images.depth is not None:
        write_pfm(f"{stem}.depth.pfm", images.depth)
        written.append(f"{stem}.depth.pfm")
    if images.xi is not None:
        write_pfm(f"{stem}.xi.pfm", images.xi)
        written.append(f"{stem}.xi.pfm")
    if images.normals is not None:
        write_normals_png(f"{stem}.normals.png", images.normals)
        written.append(f"{stem}.normals.png")
    if images.curvature is not None:
        write_pfm(f"{stem}.mean_curvature.pfm", images.curvature[..., 0])
        write_pfm(f"{stem}.gaussian_curvature.pfm", images.curvature[..., 1])
        written.extend([f"{stem}.mean_curvature.pfm", f"{stem}.gaussian_curvature.pfm"])
    return written
