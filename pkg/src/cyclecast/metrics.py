"""Forecast verification: CSI, PSNR, SSIM, and report assembly.

All metrics operate on physical-space fields (mm/h); missing cells are treated
as zero rain. CSI is undefined (returned as None) when neither field reaches
the threshold; report rows carry that as a null value so aggregation can skip
it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import convolve2d

from .fields import RainField

# Finite stand-in for the infinite PSNR of a zero-MSE comparison; keeps report
# aggregation total.
PSNR_ZERO_MSE_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricRow:
    method: str
    metric: str
    lead_min: int
    threshold: float | None
    value: float | None


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)
    thresholds: tuple[float, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)

    def values(self, method: str, metric: str, threshold: float | None = None) -> list[float]:
        """Non-null values for one (method, metric[, threshold]), in lead order."""
        rows = [
            r
            for r in self.rows
            if r.method == method
            and r.metric == metric
            and (threshold is None or r.threshold == threshold)
            and r.value is not None
        ]
        return [r.value for r in sorted(rows, key=lambda r: r.lead_min)]


def _filled(rain: RainField) -> np.ndarray:
    """Physical values with missing cells as 0 mm/h, float64."""
    v = rain.values.astype(np.float64)
    return np.where(np.isnan(v), 0.0, v)


def _check_shapes(truth: RainField, pred: RainField) -> None:
    if truth.values.shape != pred.values.shape:
        raise ValueError(
            f"shape mismatch: truth {truth.values.shape} vs prediction {pred.values.shape}"
        )


def csi(truth: RainField, pred: RainField, threshold: float) -> float | None:
    """Critical success index of the threshold masks: hits / (hits + misses + false alarms).

    Returns None when neither field reaches the threshold (the score is undefined).
    """
    _check_shapes(truth, pred)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    mask_t = _filled(truth) >= threshold
    mask_p = _filled(pred) >= threshold
    union = int(np.count_nonzero(mask_t | mask_p))
    if union == 0:
        return None
    hits = int(np.count_nonzero(mask_t & mask_p))
    return hits / union


def psnr(
    truth: RainField,
    pred: RainField,
    data_range: float,
    zero_mse_db: float = PSNR_ZERO_MSE_DB,
) -> float:
    """Peak signal-to-noise ratio in dB: 10*log10(range^2 / MSE)."""
    _check_shapes(truth, pred)
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((_filled(truth) - _filled(pred)) ** 2))
    if mse == 0.0:
        return zero_mse_db
    return 10.0 * np.log10(data_range**2 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(
    truth: RainField,
    pred: RainField,
    data_range: float,
    window: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
) -> float:
    """Mean local structural similarity with a Gaussian window.

    Local statistics are window-weighted moments over windows that fit entirely
    inside the field; fields smaller than the window are rejected.
    """
    _check_shapes(truth, pred)
    h, w = truth.values.shape
    if h < window or w < window:
        raise ValueError(f"field {h}x{w} is smaller than the {window}x{window} SSIM window")
    a = _filled(truth)
    b = _filled(pred)
    kernel = _gaussian_kernel(window, sigma)

    def smooth(x: np.ndarray) -> np.ndarray:
        return convolve2d(x, kernel, mode="valid")

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a**2
    var_b = smooth(b * b) - mu_b**2
    cov = smooth(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(s.mean())


def evaluate(
    forecasts: Sequence[RainField],
    truths: Iterable[RainField],
    thresholds: Sequence[float],
    issued_at: datetime,
    method: str = "model",
    data_range: float | None = None,
) -> MetricsReport:
    """Score forecast frames against truth frames aligned by timestamp.

    Emits one CSI row per threshold plus PSNR and SSIM rows for every forecast
    frame. ``data_range`` is the dynamic range for PSNR/SSIM, normally the
    normalization cap.
    """
    if data_range is None:
        raise ValueError("data_range (typically the normalization cap) is required")
    truth_by_time = {t.timestamp: t for t in truths}
    report = MetricsReport(thresholds=tuple(thresholds))
    for frame in forecasts:
        truth = truth_by_time.get(frame.timestamp)
        if truth is None:
            raise ValueError(f"no truth frame at {frame.timestamp.isoformat()}")
        lead = frame.timestamp - issued_at
        lead_min = int(round(lead.total_seconds() / 60.0))
        for thr in thresholds:
            report.rows.append(
                MetricRow(method, "CSI", lead_min, thr, csi(truth, frame, thr))
            )
        report.rows.append(
            MetricRow(method, "PSNR", lead_min, None, psnr(truth, frame, data_range))
        )
        report.rows.append(
            MetricRow(method, "SSIM", lead_min, None, ssim(truth, frame, data_range))
        )
    return report


def merge_reports(reports: Iterable[MetricsReport]) -> MetricsReport:
    merged = MetricsReport()
    thresholds: list[float] = []
    for rep in reports:
        merged.rows.extend(rep.rows)
        for thr in rep.thresholds:
            if thr not in thresholds:
                thresholds.append(thr)
        merged.metadata.update(rep.metadata)
    merged.thresholds = tuple(thresholds)
    return merged


def write_report(report: MetricsReport, path: Path | str) -> None:
    """Serialize as CSV with header method,metric,lead_min,threshold,value."""
    lines = ["method,metric,lead_min,threshold,value"]
    for r in report.rows:
        thr = "" if r.threshold is None else str(r.threshold)
        val = "" if r.value is None else str(r.value)
        lines.append(f"{r.method},{r.metric},{r.lead_min},{thr},{val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: Path | str) -> MetricsReport:
    """Parse a CSV written by :func:`write_report`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "method,metric,lead_min,threshold,value":
        raise ValueError(f"{path}: not a metrics report")
    report = MetricsReport()
    for line in lines[1:]:
        if not line:
            continue
        method, metric, lead, thr, val = line.split(",")
        report.rows.append(
            MetricRow(
                method,
                metric,
                int(lead),
                float(thr) if thr else None,
                float(val) if val else None,
            )
        )
    return report
