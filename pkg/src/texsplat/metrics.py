"""Image quality metrics: PSNR and SSIM under the 8-bit evaluation convention.

Both metrics quantize their inputs to unsigned 8-bit and rescale to [0, 1]
before comparing, so scores match what a viewer of the saved images would
measure. The SSIM statistics (11x11 Gaussian window, sigma 1.5, zero-padded
"same" convolution) are shared with the differentiable structural loss.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 100.0


def window_1d() -> np.ndarray:
    k = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(k ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return g / g.sum()


def blur(img: np.ndarray) -> np.ndarray:
    """Separable windowed mean with zero padding; per channel for (H, W, C)."""
    w = window_1d()
    out = ndimage.correlate1d(img, w, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, w, axis=1, mode="constant", cval=0.0)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1], round to 8-bit levels, and rescale back to [0, 1]."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel (and per-channel) structural similarity of two float images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM after 8-bit quantization."""
    return float(ssim_map(quantize_u8(a), quantize_u8(b)).mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB after 8-bit quantization, capped at 100 for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    mse = float(np.mean((quantize_u8(a) - quantize_u8(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(mse)))
