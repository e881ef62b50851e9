"""Panel rendering for visual review of forecasts.

Each lead time becomes one PNG: truth | forecast | threshold-mask agreement,
annotated with the CSI at that threshold. File-emitting only; nothing
interactive.
"""

from __future__ import annotations

from datetime import datetime
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap

from .fields import RainField
from .metrics import csi

# hit / miss / false alarm / neither
_MASK_COLORS = ListedColormap(["#f0f0f0", "#d62728", "#1f77b4", "#2ca02c"])


def panel_filename(lead_minutes: int) -> str:
    return f"panel_+{lead_minutes:03d}min.png"


def render_panel(
    truth: RainField,
    forecast: RainField,
    threshold: float,
    lead_minutes: int,
    destination: Path | str,
    vmax: float | None = None,
) -> None:
    """Render one truth/forecast/mask-difference triptych to ``destination``."""
    t = np.where(np.isnan(truth.values), 0.0, truth.values)
    f = np.where(np.isnan(forecast.values), 0.0, forecast.values)
    vmax = vmax if vmax is not None else max(float(t.max()), float(f.max()), threshold)
    score = csi(truth, forecast, threshold)
    score_text = "n/a" if score is None else f"{score:.3f}"

    mask_t = t >= threshold
    mask_f = f >= threshold
    # 0 neither, 1 miss (truth only), 2 false alarm (forecast only), 3 hit
    categories = mask_t.astype(int) + 2 * mask_f.astype(int)

    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.8))
    for ax, data, title in (
        (axes[0], t, "truth"),
        (axes[1], f, f"forecast +{lead_minutes} min"),
    ):
        im = ax.imshow(data, origin="upper", cmap="viridis", vmin=0.0, vmax=vmax)
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, label="rain rate [mm/h]")
    axes[2].imshow(categories, origin="upper", cmap=_MASK_COLORS, vmin=0, vmax=3)
    axes[2].set_title(f"masks at {threshold:g} mm/h  CSI={score_text}")
    axes[2].set_xticks([])
    axes[2].set_yticks([])
    fig.text(
        0.5,
        0.01,
        "mask panel: grey=neither, red=miss, blue=false alarm, green=hit",
        ha="center",
        fontsize=8,
    )
    fig.tight_layout(rect=(0, 0.04, 1, 1))
    fig.savefig(destination, dpi=110, metadata={"Software": None})
    plt.close(fig)


def render_panels(
    truths: list[RainField],
    forecasts: list[RainField],
    threshold: float,
    issued_at: datetime,
    out_dir: Path | str,
) -> list[Path]:
    """One panel per forecast frame, matched to truth by timestamp."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth_by_time = {t.timestamp: t for t in truths}
    written: list[Path] = []
    for frame in forecasts:
        truth = truth_by_time.get(frame.timestamp)
        if truth is None:
            raise ValueError(f"no truth frame at {frame.timestamp.isoformat()}")
        lead_min = int(round((frame.timestamp - issued_at).total_seconds() / 60.0))
        path = out_dir / panel_filename(lead_min)
        render_panel(truth, frame, threshold, lead_min, path)
        written.append(path)
    return written
