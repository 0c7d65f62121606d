"""Builds the optional C extension holding the image-QC hot kernels.

The package works without it: puzzlegen.kernels falls back to the NumPy
implementations when the compiled module is absent.
"""

import os

from setuptools import setup, Extension


def build_ext_modules():
    if os.environ.get("PUZZLEGEN_SKIP_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except Exception:
        return []
    ext = Extension(
        name="puzzlegen._kernels",
        sources=[os.path.join("src", "puzzlegen", "_kernels.pyx")],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=build_ext_modules())
