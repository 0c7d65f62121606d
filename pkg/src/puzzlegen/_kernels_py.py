"""NumPy implementations of the image-QC kernels.

Fallback backend used when the compiled extension is unavailable (or forced
via PUZZLEGEN_NO_EXT=1). Same contracts as puzzlegen._kernels.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._kernels_common import (
    HASH_SIZE,
    LUMA_B,
    LUMA_G,
    LUMA_R,
    PHASH_QUANTUM,
    SSIM_C1,
    SSIM_C2,
    SSIM_L,
    SSIM_STRIDE,
    SSIM_WINDOW,
    dct_table,
    resize_weights,
)

BACKEND = "numpy"


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma, float64 in [0, 255], from (h, w, 3) uint8."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * LUMA_R + rgb[..., 1] * LUMA_G + rgb[..., 2] * LUMA_B


def phash64(gray: np.ndarray) -> int:
    """64-bit perceptual hash of a grayscale image.

    Area-average to 32x32, orthonormal 2-D DCT-II, take the 8x8 coefficient
    block at rows/cols 1..8 (dropping the DC row and column), quantize to
    1e-6, threshold strictly above the median. Bit (r, c) lands at position
    63 - (r*8 + c), row-major, MSB first.
    """
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    small = resize_weights(h) @ gray @ resize_weights(w).T
    t = dct_table()
    coeffs = (t @ small @ t.T)[1:9, 1:9]
    q = np.round(coeffs / PHASH_QUANTUM) * PHASH_QUANTUM
    median = np.median(q)
    bits = (q > median).ravel()
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def ssim_vs_white(gray: np.ndarray) -> float:
    """Mean SSIM against an all-white reference over 8x8 windows, stride 4."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    win = min(SSIM_WINDOW, h, w)
    windows = sliding_window_view(gray, (win, win))[::SSIM_STRIDE, ::SSIM_STRIDE]
    n = win * win
    s1 = windows.sum(axis=(2, 3))
    s2 = (windows * windows).sum(axis=(2, 3))
    mu = s1 / n
    var = np.maximum(s2 / n - mu * mu, 0.0)
    # Reference is constant white: mu_y = L, sigma_y = sigma_xy = 0.
    num = (2.0 * mu * SSIM_L + SSIM_C1) * SSIM_C2
    den = (mu * mu + SSIM_L * SSIM_L + SSIM_C1) * (var + SSIM_C2)
    return float(np.mean(num / den))


def gradient_energy(gray: np.ndarray) -> float:
    """Mean of squared forward differences on the [0, 1]-normalized image."""
    g = np.asarray(gray, dtype=np.float64) / 255.0
    h, w = g.shape
    dx = g[:, 1:] - g[:, :-1]
    dy = g[1:, :] - g[:-1, :]
    return float((np.sum(dx * dx) + np.sum(dy * dy)) / (h * w))
