"""Build script: compiles the optional Cython kernel core.

Set LIQUIDBENCH_NO_EXT=1 to skip the extension entirely; the package then
runs on the pure-NumPy fallback kernels.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("LIQUIDBENCH_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "liquidbench._kernels_cy",
                    ["src/liquidbench/_kernels_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    # gcc fuses paired sin()/cos() calls into glibc sincos(),
                    # which rounds differently; keep the RNG's normal variates
                    # bit-identical to the pure-Python backend.
                    extra_compile_args=[
                        "-O3",
                        "-fno-builtin-sin",
                        "-fno-builtin-cos",
                        "-fno-builtin-sincos",
                    ],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        # No Cython/NumPy at build time: install the pure-Python fallback.
        ext_modules = []

setup(ext_modules=ext_modules)
