"""Gridded rain-rate fields and the affine mapping between physical and model space.

Physical space is mm/h on a fixed grid; model space is [-1, 1]. The mapping is
v' = 2*min(v, cap)/cap - 1, so 0 mm/h sits at -1 and ``cap`` mm/h at +1. Missing
cells are carried as NaN in physical space and collapse to -1 (no rain) when
normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

# Rain rate (mm/h) mapped to +1 unless the caller overrides it. High enough to
# leave headroom above operational heavy-rain thresholds.
DEFAULT_CAP = 100.0


@dataclass(frozen=True)
class GridMeta:
    """Geometry and cadence shared by every frame of a dataset."""

    height: int
    width: int
    resolution_km: float = 1.0
    cadence_minutes: int = 5

    def __post_init__(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.height}x{self.width}")
        if self.resolution_km <= 0:
            raise ValueError("resolution_km must be positive")
        if self.cadence_minutes <= 0:
            raise ValueError("cadence_minutes must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def _check_timestamp(timestamp: datetime) -> datetime:
    if timestamp.tzinfo is None:
        raise ValueError("timestamp must be timezone-aware (UTC)")
    timestamp = timestamp.astimezone(timezone.utc)
    if timestamp.microsecond != 0:
        raise ValueError("timestamp must have whole-second precision")
    return timestamp


@dataclass
class RainField:
    """One rain-rate frame in physical units (mm/h, float32; NaN marks missing)."""

    meta: GridMeta
    timestamp: datetime
    values: np.ndarray

    def __post_init__(self) -> None:
        self.timestamp = _check_timestamp(self.timestamp)
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != self.meta.shape:
            raise ValueError(f"values shape {values.shape} does not match meta {self.meta.shape}")
        finite = values[~np.isnan(values)]
        if np.any(finite < 0):
            raise ValueError("rain rates must be non-negative")
        if not np.all(np.isfinite(finite)):
            raise ValueError("rain rates must be finite or NaN (missing)")
        self.values = values

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def same_values(self, other: "RainField") -> bool:
        """Bitwise payload equality (NaN patterns included)."""
        return self.values.tobytes() == other.values.tobytes()


@dataclass
class NormalizedField:
    """One frame in model space: float64 values in [-1, 1]."""

    meta: GridMeta
    timestamp: datetime
    values: np.ndarray
    cap_mm_per_h: float

    def __post_init__(self) -> None:
        self.timestamp = _check_timestamp(self.timestamp)
        if self.cap_mm_per_h <= 0:
            raise ValueError("cap_mm_per_h must be positive")
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.meta.shape:
            raise ValueError(f"values shape {values.shape} does not match meta {self.meta.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("normalized values must be finite")
        if values.min() < -1.0 or values.max() > 1.0:
            raise ValueError("normalized values must lie in [-1, 1]")
        self.values = values


def normalize(field: RainField, cap: float = DEFAULT_CAP) -> NormalizedField:
    """Map a physical field into [-1, 1].

    Per cell: v' = 2*min(v, cap)/cap - 1. Missing cells map to -1. Arithmetic is
    done in float64 so the round trip through :func:`denormalize` is exact at
    float32 resolution.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    v = field.values.astype(np.float64)
    v = np.where(np.isnan(v), 0.0, v)
    out = 2.0 * np.minimum(v, cap) / cap - 1.0
    return NormalizedField(
        meta=field.meta,
        timestamp=field.timestamp,
        values=out,
        cap_mm_per_h=float(cap),
    )


def denormalize(nfield: NormalizedField) -> RainField:
    """Invert :func:`normalize`: v = cap*(v'+1)/2, clamped to non-negative.

    Composition denormalize(normalize(f)) equals f with each cell clamped to the
    cap; missing cells come back as 0 mm/h.
    """
    cap = nfield.cap_mm_per_h
    v = cap * (nfield.values + 1.0) / 2.0
    v = np.maximum(v, 0.0)
    return RainField(
        meta=nfield.meta,
        timestamp=nfield.timestamp,
        values=v.astype(np.float32),
    )


def threshold_to_model_space(threshold: float, cap: float) -> float:
    """Map a physical mm/h threshold through the same affine map as the data.

    Cell-wise, v >= threshold in physical space is equivalent to
    v' >= threshold' in model space whenever threshold < cap.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    return 2.0 * min(threshold, cap) / cap - 1.0

