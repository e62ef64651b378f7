"""Image quality metrics: PSNR, SSIM, and the blended L1/SSIM score."""

from __future__ import annotations

import numpy as np

from .rasterizer import Image

PSNR_CAP_DB = 99.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _check_same_size(a: Image, b: Image):
    if a.rgb.shape != b.rgb.shape:
        raise ValueError(f"image dimensions differ: {a.rgb.shape} vs {b.rgb.shape}")


def mse(a: Image, b: Image) -> float:
    _check_same_size(a, b)
    diff = a.rgb.astype(np.float64) - b.rgb.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 99."""
    m = mse(a, b)
    if m < 1e-10:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / m), PSNR_CAP_DB))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", windows, kernel)


def ssim(a: Image, b: Image) -> float:
    """Structural similarity: 11x11 Gaussian window (sigma 1.5), K1/K2 = 0.01/0.03,
    computed per channel on unit-range images and averaged."""
    _check_same_size(a, b)
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ValueError(
            f"image {a.width}x{a.height} smaller than the {_SSIM_WINDOW}px SSIM window"
        )
    kernel = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    scores = []
    for ch in range(3):
        x = a.rgb[:, :, ch].astype(np.float64)
        y = b.rgb[:, :, ch].astype(np.float64)
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        var_x = _filter_valid(x * x, kernel) - mu_x * mu_x
        var_y = _filter_valid(y * y, kernel) - mu_y * mu_y
        cov = _filter_valid(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def combined_loss(a: Image, b: Image, lam: float = 0.2) -> float:
    """(1 - lam) * L1 + lam * (1 - SSIM); the photometric score used as a metric."""
    _check_same_size(a, b)
    l1 = float(np.mean(np.abs(a.rgb.astype(np.float64) - b.rgb.astype(np.float64))))
    return (1.0 - lam) * l1 + lam * (1.0 - ssim(a, b))
