"""Kernel backend selection.

The hot sequence kernels exist twice: a Cython extension
(``liquidbench._kernels_cy``) and a pure-NumPy fallback
(``liquidbench._kernels_py``).  The compiled one is preferred when importable;
setting ``LIQUIDBENCH_PURE=1`` forces the fallback.  Both expose identical
functions, so everything downstream imports ``kernels`` from here.
"""

import os

from . import _kernels_py

if os.environ.get("LIQUIDBENCH_PURE"):
    kernels = _kernels_py
    HAS_COMPILED = False
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[no-redef]
        HAS_COMPILED = True
    except ImportError:
        kernels = _kernels_py
        HAS_COMPILED = False

BACKEND_NAME = "compiled" if HAS_COMPILED else "pure"
