"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); the extension only accelerates the resampler and overlap-add
inner loops.
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sslse._kernels",
                ["src/sslse/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
