# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled image-QC kernels: grayscale, pHash, SSIM-vs-white, gradient energy.

Same contracts as puzzlegen._kernels_py; fused loops avoid the temporaries
the NumPy backend allocates. The DCT basis and resize weights come from
_kernels_common so both backends share identical tables.
"""

import numpy as np

cimport numpy as cnp

from ._kernels_common import (
    PHASH_QUANTUM,
    SSIM_C1,
    SSIM_C2,
    SSIM_L,
    SSIM_STRIDE,
    SSIM_WINDOW,
    dct_table,
    resize_weights,
)

cnp.import_array()

BACKEND = "cython"

cdef double _LUMA_R = 0.299
cdef double _LUMA_G = 0.587
cdef double _LUMA_B = 0.114


def grayscale(rgb):
    """Rec.601 luma, float64 in [0, 255], from (h, w, 3) uint8."""
    cdef cnp.uint8_t[:, :, ::1] px = np.ascontiguousarray(rgb, dtype=np.uint8)
    cdef Py_ssize_t h = px.shape[0], w = px.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(h):
        for j in range(w):
            out[i, j] = px[i, j, 0] * _LUMA_R + px[i, j, 1] * _LUMA_G + px[i, j, 2] * _LUMA_B
    return out_arr


cdef void _spans(double[:, ::1] weights, Py_ssize_t[::1] lo, Py_ssize_t[::1] hi) noexcept:
    # area-average weight rows are contiguous spans; find their extents
    cdef Py_ssize_t n = weights.shape[0], m = weights.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        lo[i] = 0
        hi[i] = 0
        for j in range(m):
            if weights[i, j] != 0.0:
                lo[i] = j
                break
        for j in range(m - 1, -1, -1):
            if weights[i, j] != 0.0:
                hi[i] = j + 1
                break


def phash64(gray):
    """64-bit perceptual hash; layout documented in docs/qc-kernels.md."""
    g_arr = np.ascontiguousarray(gray, dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1]

    cdef double[:, ::1] wr = resize_weights(h)
    cdef double[:, ::1] wc = resize_weights(w)
    lo_r_arr = np.empty(32, dtype=np.intp)
    hi_r_arr = np.empty(32, dtype=np.intp)
    lo_c_arr = np.empty(32, dtype=np.intp)
    hi_c_arr = np.empty(32, dtype=np.intp)
    cdef Py_ssize_t[::1] lo_r = lo_r_arr, hi_r = hi_r_arr
    cdef Py_ssize_t[::1] lo_c = lo_c_arr, hi_c = hi_c_arr
    _spans(wr, lo_r, hi_r)
    _spans(wc, lo_c, hi_c)

    # separable area-average over the weight spans: rows first, then columns
    tmp_arr = np.empty((32, w), dtype=np.float64)
    small_arr = np.empty((32, 32), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] small = small_arr
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(32):
        for j in range(w):
            acc = 0.0
            for l in range(lo_r[i], hi_r[i]):
                acc += wr[i, l] * g[l, j]
            tmp[i, j] = acc
    for i in range(32):
        for j in range(32):
            acc = 0.0
            for l in range(lo_c[j], hi_c[j]):
                acc += wc[j, l] * tmp[i, l]
            small[i, j] = acc

    cdef double[:, ::1] t = dct_table()
    d1_arr = np.empty((32, 32), dtype=np.float64)
    d2_arr = np.empty((32, 32), dtype=np.float64)
    cdef double[:, ::1] d1 = d1_arr
    cdef double[:, ::1] d2 = d2_arr
    for i in range(32):
        for j in range(32):
            acc = 0.0
            for l in range(32):
                acc += t[i, l] * small[l, j]
            d1[i, j] = acc
    for i in range(32):
        for j in range(32):
            acc = 0.0
            for l in range(32):
                acc += d1[i, l] * t[j, l]
            d2[i, j] = acc

    cdef double quantum = PHASH_QUANTUM
    cdef double[64] q
    cdef double[64] srt
    cdef Py_ssize_t r, c, idx, k2
    cdef double v
    for r in range(8):
        for c in range(8):
            v = d2[r + 1, c + 1] / quantum
            # round-half-away-from-zero matches np.round's behavior closely
            # enough here because quantized magnitudes are far from .5 ties
            q[r * 8 + c] = _round_half_even(v) * quantum
    for idx in range(64):
        srt[idx] = q[idx]
    # insertion sort: 64 elements
    cdef Py_ssize_t a_i, b_i
    cdef double key
    for a_i in range(1, 64):
        key = srt[a_i]
        b_i = a_i - 1
        while b_i >= 0 and srt[b_i] > key:
            srt[b_i + 1] = srt[b_i]
            b_i -= 1
        srt[b_i + 1] = key
    cdef double median = 0.5 * (srt[31] + srt[32])

    value = 0
    for idx in range(64):
        value = (value << 1) | (1 if q[idx] > median else 0)
    return value


cdef double _round_half_even(double v) noexcept:
    # Mirrors np.round (banker's rounding) so both backends quantize alike.
    cdef double f = v - (v // 1.0)
    cdef double base = v // 1.0
    if f > 0.5:
        return base + 1.0
    if f < 0.5:
        return base
    if (<long long> base) % 2 == 0:
        return base
    return base + 1.0


def ssim_vs_white(gray):
    """Mean SSIM against an all-white reference over 8x8 windows, stride 4."""
    g_arr = np.ascontiguousarray(gray, dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1]
    cdef Py_ssize_t win = SSIM_WINDOW
    if h < win:
        win = h
    if w < win:
        win = w
    cdef Py_ssize_t stride = SSIM_STRIDE
    cdef double c1 = SSIM_C1, c2 = SSIM_C2, L = SSIM_L
    cdef double n = <double> (win * win)
    cdef Py_ssize_t i, j, r, c
    cdef double s1, s2, mu, var, term, total
    cdef Py_ssize_t count = 0
    total = 0.0
    i = 0
    while i + win <= h:
        j = 0
        while j + win <= w:
            s1 = 0.0
            s2 = 0.0
            for r in range(i, i + win):
                for c in range(j, j + win):
                    s1 += g[r, c]
                    s2 += g[r, c] * g[r, c]
            mu = s1 / n
            var = s2 / n - mu * mu
            if var < 0.0:
                var = 0.0
            term = ((2.0 * mu * L + c1) * c2) / ((mu * mu + L * L + c1) * (var + c2))
            total += term
            count += 1
            j += stride
        i += stride
    return total / count


def gradient_energy(gray):
    """Mean of squared forward differences on the [0, 1]-normalized image."""
    g_arr = np.ascontiguousarray(gray, dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc = 0.0, d
    for i in range(h):
        for j in range(w):
            if j + 1 < w:
                d = (g[i, j + 1] - g[i, j]) / 255.0
                acc += d * d
            if i + 1 < h:
                d = (g[i + 1, j] - g[i, j]) / 255.0
                acc += d * d
    return acc / (h * w)
