import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the fallback kernels are used
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("OOHLAB_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "oohlab.routing._core",
                ["src/oohlab/routing/_core.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math: kernels must agree bit-for-bit with the fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
