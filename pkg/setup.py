"""Build script for the optional compiled convolution kernels.

The extension is a pure speed play; the package works without it through the
numpy backend in brt._kernels. Set BRT_SKIP_EXT=1 to skip compilation.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BRT_SKIP_EXT", "0") != "1":
    from Cython.Build import cythonize

    ext = Extension(
        "brt._kernels._convext",
        sources=["src/brt/_kernels/_convext.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        optional=True,  # fall back to the numpy backend if the toolchain is missing
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )

setup(ext_modules=ext_modules)
