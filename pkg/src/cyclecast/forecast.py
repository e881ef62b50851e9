"""Iterative short-range forecasting with the forward generator.

Each iteration feeds the previous prediction back through the generator, so a
single one-step model extends to the full nowcasting horizon. Iteration happens
entirely in model space; frames are denormalized only on emission.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import torch

from .fields import DEFAULT_CAP, NormalizedField, RainField, denormalize, normalize
from .networks import Generator
from .storage import DatasetManifest, write_field, write_manifest

DEFAULT_HORIZON_MINUTES = 120


@dataclass(frozen=True)
class ForecastRequest:
    initial: RainField
    n_steps: int
    step_minutes: int = 10
    cap: float = DEFAULT_CAP
    horizon_minutes: int = DEFAULT_HORIZON_MINUTES

    def __post_init__(self) -> None:
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.step_minutes <= 0:
            raise ValueError("step_minutes must be positive")
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        if self.n_steps * self.step_minutes > self.horizon_minutes:
            raise ValueError(
                f"{self.n_steps} steps of {self.step_minutes} min exceed the "
                f"{self.horizon_minutes}-minute horizon"
            )


def forecast_iterative(g_f: Generator, request: ForecastRequest) -> list[RainField]:
    """Roll the forward generator out ``n_steps`` times from the initial field."""
    if g_f.training:
        raise ValueError("generator must be in eval mode for forecasting")
    dtype = next(g_f.parameters()).dtype
    start = normalize(request.initial, request.cap)
    x = torch.from_numpy(start.values).to(dtype).unsqueeze(0).unsqueeze(0)
    frames: list[RainField] = []
    with torch.no_grad():
        for k in range(1, request.n_steps + 1):
            x = g_f(x)
            if not torch.isfinite(x).all():
                raise RuntimeError(f"non-finite generator output at iteration {k}")
            # tanh keeps outputs inside (-1, 1) analytically; the clamp guards
            # against numeric drift in the substrate
            x = x.clamp(-1.0, 1.0)
            nfield = NormalizedField(
                meta=request.initial.meta,
                timestamp=request.initial.timestamp + timedelta(minutes=k * request.step_minutes),
                values=x[0, 0].numpy().astype(np.float64),
                cap_mm_per_h=request.cap,
            )
            frames.append(denormalize(nfield))
    return frames


def persistence_baseline(
    initial: RainField, n_steps: int, step_minutes: int = 10
) -> list[RainField]:
    """The weakest reference forecaster: repeat the latest observation."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    return [
        replace(initial, timestamp=initial.timestamp + timedelta(minutes=k * step_minutes))
        for k in range(1, n_steps + 1)
    ]


def lead_filename(lead_minutes: int) -> str:
    return f"lead_+{lead_minutes:03d}min.hsr"


def write_forecast(
    frames: list[RainField],
    issued_at: datetime,
    out_dir: Path | str,
) -> Path:
    """Write forecast frames as field files named by lead time, plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[datetime, str]] = []
    for frame in frames:
        lead_min = int(round((frame.timestamp - issued_at).total_seconds() / 60.0))
        rel = lead_filename(lead_min)
        write_field(frame, out_dir / rel)
        entries.append((frame.timestamp, rel))
    if not frames:
        raise ValueError("no forecast frames to write")
    manifest = DatasetManifest(meta=frames[0].meta, entries=entries, step=1)
    manifest_path = out_dir / "manifest.txt"
    write_manifest(manifest, manifest_path, comments=[f"issued_at={issued_at.isoformat()}"])
    return manifest_path
