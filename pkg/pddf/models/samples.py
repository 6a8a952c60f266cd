from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class SampleType(str, Enum):
    """
    The six oriented-point sampling recipes.
    """
    U = "U"  # uniform
    A = "A"  # at-surface
    B = "B"  # bounding
    S = "S"  # surface
    T = "T"  # tangent
    O = "O"  # offset

    @property
    def code(self) -> int:
        return SAMPLE_TYPE_ORDER.index(self)

    @classmethod
    def from_code(cls, code: int) -> "SampleType":
        return SAMPLE_TYPE_ORDER[code]


SAMPLE_TYPE_ORDER: List[SampleType] = [SampleType.U, SampleType.A, SampleType.B,
                                       SampleType.S, SampleType.T, SampleType.O]

# Kind code for per-minibatch regularisation points (never stored in a dataset)
REG_ONLY_CODE = len(SAMPLE_TYPE_ORDER)


def _default_counts() -> Dict[SampleType, int]:
    return {
        SampleType.U: 250_000,
        SampleType.A: 250_000,
        SampleType.B: 125_000,
        SampleType.S: 125_000,
        SampleType.T: 125_000,
        SampleType.O: 125_000,
    }


class DatasetSpec(BaseModel):
    """
    How many samples of each type to draw, and how.
    """
    model_config = ConfigDict(extra="forbid")

    counts: Dict[SampleType, int] = Field(default_factory=_default_counts, description="Samples per type")
    boundary_bias: float = Field(0.10, ge=0.0, le=1.0, description="Fraction of A/T/O positions moved onto the box boundary")
    epsilon_o: float = Field(0.05, gt=0.0, description="Offset distance for O-type samples")
    seed: int = Field(0, description="Dataset seed; type k uses seed + k")

    @field_validator("counts")
    @classmethod
    def _complete(cls, counts: Dict[SampleType, int]) -> Dict[SampleType, int]:
        full = {t: 0 for t in SAMPLE_TYPE_ORDER}
        full.update(counts)
        if any(c < 0 for c in full.values()):
            raise ValueError("sample counts must be non-negative")
        return full

    def scaled(self, factor: float) -> "DatasetSpec":
        counts = {t: int(round(c * factor)) for t, c in self.counts.items()}
        return self.model_copy(update={"counts": counts})


class TrainingSample(BaseModel):
    """
    One labelled oriented point.
    """
    p: tuple
    v: tuple
    visible: bool
    depth: Optional[float] = None
    normal: Optional[tuple] = None
    kind: SampleType


@dataclass
class SampleSet:
    """
    Column store of labelled oriented points. Invisible rows hold depth 0 and
    a zero normal.
    """
    p: np.ndarray
    v: np.ndarray
    kind: np.ndarray
    visible: np.ndarray
    depth: np.ndarray
    normal: np.ndarray

    def __len__(self) -> int:
        return int(self.p.shape[0])

    @classmethod
    def empty(cls, dtype=np.float32) -> "SampleSet":
        return cls(
            p=np.zeros((0, 3), dtype=dtype),
            v=np.zeros((0, 3), dtype=dtype),
            kind=np.zeros((0,), dtype=np.uint8),
            visible=np.zeros((0,), dtype=np.uint8),
            depth=np.zeros((0,), dtype=dtype),
            normal=np.zeros((0, 3), dtype=dtype),
        )

    @classmethod
    def concatenate(cls, parts: List["SampleSet"]) -> "SampleSet":
        if not parts:
            return cls.empty()
        return cls(
            p=np.concatenate([s.p for s in parts]),
            v=np.concatenate([s.v for s in parts]),
            kind=np.concatenate([s.kind for s in parts]),
            visible=np.concatenate([s.visible for s in parts]),
            depth=np.concatenate([s.depth for s in parts]),
            normal=np.concatenate([s.normal for s in parts]),
        )

    def subset(self, index: np.ndarray) -> "SampleSet":
        return SampleSet(
            p=self.p[index],
            v=self.v[index],
            kind=self.kind[index],
            visible=self.visible[index],
            depth=self.depth[index],
            normal=self.normal[index],
        )

    def of_type(self, kind: SampleType) -> "SampleSet":
        return self.subset(np.flatnonzero(self.kind == kind.code))

    def astype(self, dtype) -> "SampleSet":
        return SampleSet(
            p=self.p.astype(dtype),
            v=self.v.astype(dtype),
            kind=self.kind.astype(np.uint8),
            visible=self.visible.astype(np.uint8),
            depth=self.depth.astype(dtype),
            normal=self.normal.astype(dtype),
        )

    def counts(self) -> Dict[SampleType, int]:
        return {t: int(np.count_nonzero(self.kind == t.code)) for t in SAMPLE_TYPE_ORDER}

    def sample(self, i: int) -> TrainingSample:
        visible = bool(self.visible[i])
        return TrainingSample(
            p=tuple(float(c) for c in self.p[i]),
            v=tuple(float(c) for c in self.v[i]),
            visible=visible,
            depth=float(self.depth[i]) if visible else None,
            normal=tuple(float(c) for c in self.normal[i]) if visible else None,
            kind=SampleType.from_code(int(self.kind[i])),
        )
