"""Data model and normalization tests."""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclecast.fields import (
    GridMeta,
    NormalizedField,
    RainField,
    denormalize,
    normalize,
    threshold_to_model_space,
)

from conftest import T0, constant_field, field_at


class TestGridMeta:
    def test_valid(self):
        meta = GridMeta(height=64, width=48, resolution_km=1.0, cadence_minutes=5)
        assert meta.shape == (64, 48)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"height": 7, "width": 8},
            {"height": 8, "width": 4},
            {"height": 8, "width": 8, "resolution_km": 0.0},
            {"height": 8, "width": 8, "cadence_minutes": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GridMeta(**kwargs)


class TestRainField:
    def test_negative_rejected(self, meta8):
        values = np.zeros((8, 8), dtype=np.float32)
        values[2, 3] = -0.1
        with pytest.raises(ValueError, match="non-negative"):
            field_at(meta8, values)

    def test_nan_is_missing(self, meta8):
        values = np.zeros((8, 8), dtype=np.float32)
        values[1, 1] = np.nan
        f = field_at(meta8, values)
        assert f.missing_mask[1, 1]
        assert f.missing_mask.sum() == 1

    def test_inf_rejected(self, meta8):
        values = np.zeros((8, 8), dtype=np.float32)
        values[0, 0] = np.inf
        with pytest.raises(ValueError):
            field_at(meta8, values)

    def test_shape_mismatch(self, meta8):
        with pytest.raises(ValueError, match="shape"):
            field_at(meta8, np.zeros((8, 9), dtype=np.float32))

    def test_naive_timestamp_rejected(self, meta8):
        with pytest.raises(ValueError, match="timezone"):
            RainField(meta=meta8, timestamp=datetime(2021, 7, 1), values=np.zeros((8, 8)))

    def test_subsecond_timestamp_rejected(self, meta8):
        ts = datetime(2021, 7, 1, microsecond=5, tzinfo=timezone.utc)
        with pytest.raises(ValueError, match="second"):
            RainField(meta=meta8, timestamp=ts, values=np.zeros((8, 8)))


class TestNormalize:
    def test_zero_maps_to_minus_one(self, meta8):
        n = normalize(constant_field(meta8, 0.0), cap=100.0)
        assert np.all(n.values == -1.0)

    def test_cap_maps_to_plus_one(self, meta8):
        n = normalize(constant_field(meta8, 100.0), cap=100.0)
        assert np.all(n.values == 1.0)

    def test_mid_value(self, meta8):
        # hand evaluation: 2*30/100 - 1 = -0.4
        n = normalize(constant_field(meta8, 30.0), cap=100.0)
        assert n.values[0, 0] == pytest.approx(-0.4, abs=1e-7)

    def test_missing_maps_to_minus_one(self, meta8):
        values = np.full((8, 8), 10.0, dtype=np.float32)
        values[3, 4] = np.nan
        n = normalize(field_at(meta8, values), cap=100.0)
        assert n.values[3, 4] == -1.0

    def test_above_cap_clamps(self, meta8):
        n = normalize(constant_field(meta8, 250.0), cap=100.0)
        assert np.all(n.values == 1.0)

    def test_bad_cap(self, meta8):
        with pytest.raises(ValueError):
            normalize(constant_field(meta8, 0.0), cap=0.0)

    def test_output_in_bounds_and_monotone(self, meta8):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 300, size=(8, 8)).astype(np.float32)
        b = a + rng.uniform(0, 50, size=(8, 8)).astype(np.float32)
        na = normalize(field_at(meta8, a), cap=100.0).values
        nb = normalize(field_at(meta8, b), cap=100.0).values
        assert na.min() >= -1.0 and na.max() <= 1.0
        assert np.all(nb >= na)


class TestDenormalize:
    def test_bounds(self, meta8):
        lo = NormalizedField(meta8, T0, np.full((8, 8), -1.0), cap_mm_per_h=100.0)
        hi = NormalizedField(meta8, T0, np.full((8, 8), 1.0), cap_mm_per_h=100.0)
        assert np.all(denormalize(lo).values == 0.0)
        assert np.all(denormalize(hi).values == 100.0)

    def test_out_of_range_rejected(self, meta8):
        with pytest.raises(ValueError):
            NormalizedField(meta8, T0, np.full((8, 8), 1.5), cap_mm_per_h=100.0)

    def test_round_trip_clamps_to_cap(self, meta8):
        f = constant_field(meta8, 150.0)
        back = denormalize(normalize(f, cap=100.0))
        assert np.all(back.values == 100.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_round_trip_exact_below_cap(self, seed):
        meta = GridMeta(8, 8)
        rng = np.random.default_rng(seed)
        values = rng.uniform(0, 99.99, size=(8, 8)).astype(np.float32)
        f = field_at(meta, values)
        back = denormalize(normalize(f, cap=100.0))
        # float64 round trip re-rounds to the original float32 exactly
        assert np.array_equal(back.values, values)

    def test_round_trip_within_tolerance(self, meta8):
        rng = np.random.default_rng(7)
        values = rng.uniform(0, 100, size=(8, 8)).astype(np.float32)
        f = field_at(meta8, values)
        back = denormalize(normalize(f, cap=100.0))
        assert np.max(np.abs(back.values - np.minimum(values, 100.0))) < 1e-6

    def test_missing_round_trips_to_zero(self, meta8):
        values = np.full((8, 8), 5.0, dtype=np.float32)
        values[0, 0] = np.nan
        back = denormalize(normalize(field_at(meta8, values), cap=100.0))
        assert back.values[0, 0] == 0.0


def test_threshold_mapping_matches_normalization(meta8):
    # thresholding physical values then normalizing must agree with
    # thresholding normalized values at the mapped threshold
    rng = np.random.default_rng(3)
    values = rng.uniform(0, 60, size=(8, 8)).astype(np.float32)
    f = field_at(meta8, values)
    thr = 30.0
    mapped = threshold_to_model_space(thr, cap=100.0)
    physical_mask = values >= thr
    model_mask = normalize(f, cap=100.0).values >= mapped
    assert np.array_equal(physical_mask, model_mask)
