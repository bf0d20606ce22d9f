"""Build the optional Cython recurrent kernels.

The package works without them: ``nmtselect.kernels`` falls back to numpy
when the extension is missing or fails to build.
"""
import os

import numpy as np
from setuptools import Extension, setup


def _extensions():
    if os.environ.get("NMTSELECT_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "nmtselect._ckernels",
        ["src/nmtselect/_ckernels.pyx"],
        include_dirs=[np.get_include(), "src/nmtselect"],
        extra_compile_args=["-O3", "-fno-trapping-math"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=_extensions())
