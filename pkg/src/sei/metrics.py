"""PSNR and SSIM on the luminance channel."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndgrad as nd

PSNR_CAP = 99.0
# full-range BT.601 luma
Y_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MetricRow:
    id: str
    psnr_y: float
    ssim_y: float


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, nd.Tensor) else x, dtype=np.float64)


def rgb_to_y(image) -> np.ndarray:
    a = _array(image)
    if a.shape[-1] != 3:
        raise ValueError(f"rgb_to_y needs 3 channels, got {a.shape[-1]}")
    return (a @ Y_WEIGHTS)[..., None]


def luminance(image) -> np.ndarray:
    """Y channel for RGB input; single-channel input is returned unchanged."""
    a = _array(image)
    if a.ndim == 2:
        a = a[..., None]
    if a.shape[-1] == 1:
        return a
    return rgb_to_y(a)


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / err))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    c = np.arange(size) - size // 2
    g = np.exp(-(c[:, None] ** 2 + c[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b, peak: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM with a Gaussian window and periodic boundaries."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[-1] != 1:
        raise ValueError("ssim expects a single-channel image")
    win = _gaussian_window(window, sigma)
    if win.shape[0] > min(a.shape[-3], a.shape[-2]):
        raise ValueError("image smaller than the SSIM window")
    blur = lambda t: nd._periodic_conv(t, win, "direct")  # noqa: E731
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def image_metrics(sample_id: str, estimate, reference) -> MetricRow:
    ya, yb = luminance(estimate), luminance(reference)
    return MetricRow(sample_id, psnr(ya, yb), ssim(ya, yb))


def write_metrics_csv(rows: list[MetricRow], path, summary: bool = True) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "psnr_y", "ssim_y"])
        for row in rows:
            w.writerow([row.id, repr(row.psnr_y), repr(row.ssim_y)])
        if summary and rows:
            w.writerow(["mean", repr(float(np.mean([r.psnr_y for r in rows]))), repr(float(np.mean([r.ssim_y for r in rows])))])


def read_metrics_csv(path) -> list[MetricRow]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "psnr_y", "ssim_y"]:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [MetricRow(r["id"], float(r["psnr_y"]), float(r["ssim_y"])) for r in reader]
