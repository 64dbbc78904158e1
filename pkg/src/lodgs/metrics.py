"""Image quality metrics: PSNR and windowed SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeMismatch, TooSmall

__all__ = ["IDENTICAL", "metric_psnr", "metric_ssim", "gaussian_window", "C1", "C2"]

#: PSNR reported for bit-identical images (MSE of exactly zero).
IDENTICAL = math.inf

C1 = 0.01**2
C2 = 0.03**2
WINDOW = 11
SIGMA = 1.5


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 2D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def metric_psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Returns :data:`IDENTICAL` (``inf``) when the images match exactly.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def filter2d(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable 'same' correlation over the two leading axes with zero padding."""
    out = correlate1d(img, taps, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, taps, axis=1, mode="constant", cval=0.0)


def ssim_map(a: np.ndarray, b: np.ndarray, taps: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel SSIM on zero-padded windows, same shape as the input."""
    taps = gaussian_window() if taps is None else taps
    mu_a, mu_b = filter2d(a, taps), filter2d(b, taps)
    var_a = filter2d(a * a, taps) - mu_a * mu_a
    var_b = filter2d(b * b, taps) - mu_b * mu_b
    cov = filter2d(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def metric_ssim(a, b) -> float:
    """Mean SSIM over all fully-contained 11x11 windows (sigma 1.5), averaged over channels."""
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < WINDOW:
        raise TooSmall(f"SSIM needs at least {WINDOW}x{WINDOW} pixels, got {a.shape[:2]}")
    half = WINDOW // 2
    full = ssim_map(a, b)
    valid = full[half:a.shape[0] - half, half:a.shape[1] - half]
    return float(np.mean(valid))
