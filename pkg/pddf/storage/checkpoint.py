import json
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from loguru import logger
from pydantic import ValidationError

from pddf.core.errors import CheckpointError, StorageError
from pddf.models.field import SirenConfig
from pddf.services.field import PddfNetwork, init_siren

CHECKPOINT_MAGIC = b"DDFM1\n"
FORMAT_VERSION = 1


def _layer_table(model: PddfNetwork):
    return [{"name": name, "shape": list(t.shape)} for name, t in model.state_dict().items()]


def save_checkpoint(model: PddfNetwork, path: str, metadata: Optional[Dict[str, Any]] = None) -> None:
    """
    Write parameters as little-endian float32 after a JSON header.

    Args:
        model: Field network
        path: Output path
        metadata: Training metadata stored in the header
    """
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "layers": _layer_table(model),
        "training": metadata or {},
    }
    chunks = [
        t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        for t in model.state_dict().values()
    ]
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
            f.write(b"\n")
            for chunk in chunks:
                f.write(chunk)
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {str(e)}")
        raise StorageError(f"Cannot write checkpoint {path}: {e}") from e


def read_checkpoint_header(path: str) -> Dict[str, Any]:
    return _read(path)[0]


def _read(path: str) -> Tuple[Dict[str, Any], bytes]:
    try:
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path} is not a checkpoint (bad magic {magic!r})")
            line = f.readline()
            payload = f.read()
    except OSError as e:
        logger.error(f"Error reading checkpoint {path}: {str(e)}")
        raise StorageError(f"Cannot read checkpoint {path}: {e}") from e
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Malformed checkpoint header in {path}: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {header.get('format_version')} in {path}")
    return header, payload


def load_checkpoint(path: str) -> Tuple[PddfNetwork, Dict[str, Any]]:
    """
    Rebuild a field network from a checkpoint.

    Args:
        path: Checkpoint path

    Returns:
        (model, header)
    """
    header, payload = _read(path)
    try:
        config = SirenConfig.model_validate(header["config"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"Invalid field configuration in {path}: {e}") from e

    model = init_siren(config)
    expected = _layer_table(model)
    if header.get("layers") != expected:
        raise CheckpointError(f"Parameter shapes in {path} do not match its configuration")

    sizes = [int(np.prod(entry["shape"])) for entry in expected]
    needed = 4 * sum(sizes)
    if len(payload) < needed:
        raise CheckpointError(f"Checkpoint {path} is truncated: {len(payload)} of {needed} parameter bytes")
    if len(payload) > needed:
        raise CheckpointError(f"Checkpoint {path} has {len(payload) - needed} trailing bytes")

    values = np.frombuffer(payload, dtype="<f4")
    state = {}
    offset = 0
    for entry, size in zip(expected, sizes):
        chunk = values[offset:offset + size].reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(chunk.astype(np.float32)).to(config.torch_dtype)
        offset += size
    model.load_state_dict(state)
    return model, header
