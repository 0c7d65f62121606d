"""Constants and small tables shared by both kernel backends.

Both backends consume the same precomputed DCT basis and resize weights so
their outputs differ only by floating-point summation order, which the
documented 1e-6 coefficient quantization absorbs (see docs/qc-kernels.md).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

HASH_SIZE = 32  # image is area-averaged to 32x32 before the DCT
SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_L = 255.0
SSIM_C1 = (0.01 * SSIM_L) ** 2
SSIM_C2 = (0.03 * SSIM_L) ** 2
PHASH_QUANTUM = 1e-6  # DCT coefficients are rounded to this before the median compare

LUMA_R = 0.299
LUMA_G = 0.587
LUMA_B = 0.114


@lru_cache(maxsize=1)
def dct_table() -> np.ndarray:
    """Orthonormal DCT-II basis, shape (32, 32): T[k, n] = c_k cos(pi (2n+1) k / 64)."""
    n = HASH_SIZE
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    table = np.cos(np.pi * (2 * x + 1) * k / (2 * n))
    table *= np.sqrt(2.0 / n)
    table[0] *= np.sqrt(0.5)
    return np.ascontiguousarray(table)


@lru_cache(maxsize=32)
def resize_weights(src: int) -> np.ndarray:
    """Area-average weights mapping ``src`` samples onto 32, shape (32, src).

    Destination cell i covers the source interval [i*src/32, (i+1)*src/32);
    each source sample contributes in proportion to its overlap with that
    interval. Rows sum to 1.
    """
    dst = HASH_SIZE
    w = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), src)
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                w[i, j] = overlap
        w[i] /= scale
    return np.ascontiguousarray(w)
