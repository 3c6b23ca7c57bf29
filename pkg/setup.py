"""Builds the optional compiled kernels; the package falls back to numpy
implementations when the extension is missing."""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("SPIKEDISTILL_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "spikedistill.kernels._ckernels",
                    ["src/spikedistill/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
