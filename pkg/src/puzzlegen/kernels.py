"""Backend selection for the image-QC hot kernels.

Prefers the compiled extension (puzzlegen._kernels, built from Cython) and
falls back to the NumPy implementations. Set PUZZLEGEN_NO_EXT=1 to force
the fallback. `benchmarks/bench_kernels.py` compares the two.
"""

from __future__ import annotations

import os

from . import _kernels_py


def _load_backend():
    if os.environ.get("PUZZLEGEN_NO_EXT"):
        return _kernels_py
    try:
        from . import _kernels  # compiled extension

        return _kernels
    except ImportError:
        return _kernels_py


_impl = _load_backend()

BACKEND: str = _impl.BACKEND
grayscale = _impl.grayscale
phash64 = _impl.phash64
ssim_vs_white = _impl.ssim_vs_white
gradient_energy = _impl.gradient_energy


def available_backends() -> dict[str, object]:
    """Backends importable in this environment, keyed by name."""
    backends: dict[str, object] = {"numpy": _kernels_py}
    try:
        from . import _kernels

        backends["cython"] = _kernels
    except ImportError:
        pass
    return backends
