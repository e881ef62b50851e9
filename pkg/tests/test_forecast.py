"""Iterative forecasting contract tests."""

from __future__ import annotations

from datetime import timedelta

import numpy as np
import pytest
import torch

from cyclecast.forecast import (
    ForecastRequest,
    forecast_iterative,
    lead_filename,
    persistence_baseline,
    write_forecast,
)
from cyclecast.metrics import csi
from cyclecast.networks import GeneratorSpec, build_generator
from cyclecast.storage import read_field, read_manifest

from conftest import synthetic_pairs


@pytest.fixture
def tiny_generator():
    torch.manual_seed(50)
    g = build_generator(
        GeneratorSpec(base_width=4, bottleneck_channels=16, n_res_blocks=1, se_reduction=4)
    )
    g.eval()
    return g


@pytest.fixture
def initial_field(meta16):
    return synthetic_pairs(meta16, 1, seed=60)[0].earlier


class TestRequest:
    def test_zero_steps_allowed(self, initial_field, tiny_generator):
        req = ForecastRequest(initial=initial_field, n_steps=0)
        assert forecast_iterative(tiny_generator, req) == []

    def test_negative_steps_rejected(self, initial_field):
        with pytest.raises(ValueError):
            ForecastRequest(initial=initial_field, n_steps=-1)

    def test_horizon_enforced(self, initial_field):
        with pytest.raises(ValueError, match="horizon"):
            ForecastRequest(initial=initial_field, n_steps=13, step_minutes=10)
        ForecastRequest(initial=initial_field, n_steps=13, step_minutes=10, horizon_minutes=130)


class TestIterativeForecast:
    def test_twelve_iterations_span_two_hours(self, initial_field, tiny_generator):
        req = ForecastRequest(initial=initial_field, n_steps=12, step_minutes=10, cap=100.0)
        frames = forecast_iterative(tiny_generator, req)
        assert len(frames) == 12
        leads = [
            (f.timestamp - initial_field.timestamp).total_seconds() / 60 for f in frames
        ]
        assert leads == [10.0 * k for k in range(1, 13)]
        for f in frames:
            assert np.all(np.isfinite(f.values))
            assert float(f.values.min()) >= 0.0
            assert float(f.values.max()) <= 100.0

    def test_deterministic(self, initial_field, tiny_generator):
        req = ForecastRequest(initial=initial_field, n_steps=4)
        a = forecast_iterative(tiny_generator, req)
        b = forecast_iterative(tiny_generator, req)
        for fa, fb in zip(a, b):
            assert fa.values.tobytes() == fb.values.tobytes()

    def test_train_mode_rejected(self, initial_field, tiny_generator):
        tiny_generator.train()
        req = ForecastRequest(initial=initial_field, n_steps=1)
        with pytest.raises(ValueError, match="eval"):
            forecast_iterative(tiny_generator, req)

    def test_non_finite_output_aborts(self, initial_field, tiny_generator):
        with torch.no_grad():
            next(tiny_generator.parameters()).fill_(float("inf"))
        req = ForecastRequest(initial=initial_field, n_steps=1)
        with pytest.raises(RuntimeError, match="non-finite"):
            forecast_iterative(tiny_generator, req)


class TestPersistence:
    def test_copies_with_advanced_timestamps(self, initial_field):
        frames = persistence_baseline(initial_field, 2, step_minutes=10)
        assert len(frames) == 2
        for k, f in enumerate(frames, start=1):
            assert np.array_equal(f.values, initial_field.values)
            assert f.timestamp == initial_field.timestamp + timedelta(minutes=10 * k)

    def test_perfect_csi_against_static_truth(self, initial_field):
        from dataclasses import replace

        frames = persistence_baseline(initial_field, 1, step_minutes=10)
        truth = replace(initial_field, timestamp=frames[0].timestamp)
        assert csi(truth, frames[0], 0.5) == 1.0


class TestForecastFiles:
    def test_lead_filenames(self):
        assert lead_filename(10) == "lead_+010min.hsr"
        assert lead_filename(120) == "lead_+120min.hsr"

    def test_write_and_reload(self, tmp_path, initial_field, tiny_generator):
        req = ForecastRequest(initial=initial_field, n_steps=3, step_minutes=10)
        frames = forecast_iterative(tiny_generator, req)
        manifest_path = write_forecast(frames, initial_field.timestamp, tmp_path / "fc")
        assert (tmp_path / "fc" / "lead_+010min.hsr").exists()
        assert (tmp_path / "fc" / "lead_+030min.hsr").exists()
        text = manifest_path.read_text()
        assert text.startswith("# issued_at=")
        manifest = read_manifest(manifest_path)
        assert len(manifest.entries) == 3
        reloaded = read_field(tmp_path / "fc" / "lead_+010min.hsr")
        assert reloaded.values.tobytes() == frames[0].values.tobytes()
