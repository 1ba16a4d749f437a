"""Full-reference image quality metrics: MSE, MAE, PSNR and SSIM."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch, TooSmall

__all__ = ["mse", "mae", "psnr", "ssim", "SSIM_WINDOW", "SSIM_SIGMA", "SSIM_K1", "SSIM_K2"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


def _gaussian_1d(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_filter(x, g):
    # separable weighted window sums over the last two axes, valid region only
    k = g.size
    rows = sliding_window_view(x, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b, data_range=1.0):
    """Single-scale SSIM (Wang et al. 2004).

    Gaussian 11x11 window with sigma 1.5, ``K1 = 0.01``, ``K2 = 0.03``. Local
    statistics are evaluated only where the window fits inside the image
    and the SSIM map is averaged over positions and channels.

    Parameters
    ----------
    a, b : ndarray
        Images of identical shape ``(C, H, W)`` or ``(H, W)``.
    data_range : float
        Dynamic range of the samples.

    Returns
    -------
    float
        Mean SSIM, in [-1, 1].
    """
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[-2:]}")
    g = _gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _valid_filter(a, g)
    mu_b = _valid_filter(b, g)
    var_a = _valid_filter(a * a, g) - mu_a * mu_a
    var_b = _valid_filter(b * b, g) - mu_b * mu_b
    cov = _valid_filter(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
