import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; gridstab falls back at import
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "gridstab._core",
                ["src/gridstab/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": sys.version_info[0],
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
