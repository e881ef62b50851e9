"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from cyclecast.fields import GridMeta, RainField
from cyclecast.storage import HsrPair
from cyclecast.synth import SynthConfig, gen_sequence

T0 = datetime(2021, 7, 1, tzinfo=timezone.utc)


@pytest.fixture
def meta8() -> GridMeta:
    return GridMeta(height=8, width=8)


@pytest.fixture
def meta16() -> GridMeta:
    return GridMeta(height=16, width=16)


@pytest.fixture
def meta64() -> GridMeta:
    return GridMeta(height=64, width=64)


def field_at(meta: GridMeta, values: np.ndarray, minutes: int = 0) -> RainField:
    return RainField(
        meta=meta,
        timestamp=T0 + timedelta(minutes=minutes),
        values=np.asarray(values, dtype=np.float32),
    )


def constant_field(meta: GridMeta, value: float, minutes: int = 0) -> RainField:
    return field_at(meta, np.full(meta.shape, value, dtype=np.float32), minutes)


def synthetic_pairs(
    meta: GridMeta,
    n_pairs: int,
    seed: int,
    step: int = 2,
    velocity: tuple[float, float] = (1.0, 1.0),
    amplitude_range: tuple[float, float] = (5.0, 40.0),
    heavy_rain_fraction: float = 0.0,
    n_blobs: int = 4,
    blob_sigma: float = 3.0,
) -> list[HsrPair]:
    cfg = SynthConfig(
        meta=meta,
        n_frames=n_pairs + step,
        n_blobs=n_blobs,
        velocity=velocity,
        blob_sigma=blob_sigma,
        amplitude_range=amplitude_range,
        heavy_rain_fraction=heavy_rain_fraction,
        seed=seed,
    )
    frames = gen_sequence(cfg)
    return [HsrPair(frames[i], frames[i + step], step) for i in range(n_pairs)]
