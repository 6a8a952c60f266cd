import json
from typing import Any, Dict, Tuple

import numpy as np
from loguru import logger

from pddf.core.errors import DatasetFormatError, StorageError
from pddf.models.samples import SampleSet

DATASET_MAGIC = b"DDFD1\n"

RECORD_DTYPE = np.dtype([
    ("p", "<f4", (3,)),
    ("v", "<f4", (3,)),
    ("kind", "u1"),
    ("visible", "u1"),
    ("depth", "<f4"),
    ("normal", "<f4", (3,)),
])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 42


def encode_records(samples: SampleSet) -> bytes:
    records = np.zeros(len(samples), dtype=RECORD_DTYPE)
    records["p"] = samples.p
    records["v"] = samples.v
    records["kind"] = samples.kind
    records["visible"] = samples.visible
    records["depth"] = np.where(samples.visible.astype(bool), samples.depth, 0.0)
    records["normal"] = np.where(samples.visible.astype(bool)[:, None], samples.normal, 0.0)
    return records.tobytes()


def decode_records(payload: bytes, count: int) -> SampleSet:
    if len(payload) != count * RECORD_SIZE:
        raise DatasetFormatError(
            f"Dataset payload holds {len(payload)} bytes, expected {count} records of {RECORD_SIZE} bytes"
        )
    records = np.frombuffer(payload, dtype=RECORD_DTYPE, count=count)
    return SampleSet(
        p=records["p"].astype(np.float32),
        v=records["v"].astype(np.float32),
        kind=records["kind"].copy(),
        visible=records["visible"].copy(),
        depth=records["depth"].astype(np.float32),
        normal=records["normal"].astype(np.float32),
    )


def write_dataset(path: str, samples: SampleSet, header: Dict[str, Any]) -> None:
    """
    Write samples as magic line, one JSON header line, then fixed-width
    little-endian records.

    Args:
        path: Output path
        samples: Samples to store (cast to float32)
        header: Metadata; count and record size are added
    """
    header = dict(header)
    header["count"] = len(samples)
    header["record_size"] = RECORD_SIZE
    try:
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
            f.write(b"\n")
            f.write(encode_records(samples))
    except OSError as e:
        logger.error(f"Error writing dataset {path}: {str(e)}")
        raise StorageError(f"Cannot write dataset {path}: {e}") from e


def read_dataset_header(path: str) -> Dict[str, Any]:
    return read_dataset(path, header_only=True)[0]


def read_dataset(path: str, header_only: bool = False) -> Tuple[Dict[str, Any], SampleSet]:
    """
    Read a dataset file.

    Args:
        path: Dataset path
        header_only: Skip decoding the records

    Returns:
        (header, samples); samples is empty when header_only is set
    """
    try:
        with open(path, "rb") as f:
            magic = f.read(len(DATASET_MAGIC))
            if magic != DATASET_MAGIC:
                raise DatasetFormatError(f"{path} is not a dataset file (bad magic {magic!r})")
            line = f.readline()
            try:
                header = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise DatasetFormatError(f"Malformed dataset header in {path}: {e}") from e
            if header.get("record_size") != RECORD_SIZE:
                raise DatasetFormatError(f"Unsupported record size {header.get('record_size')} in {path}")
            if header_only:
                return header, SampleSet.empty()
            payload = f.read()
    except OSError as e:
        logger.error(f"Error reading dataset {path}: {str(e)}")
        raise StorageError(f"Cannot read dataset {path}: {e}") from e

    return header, decode_records(payload, int(header.get("count", -1)))
