"""Kernel selection: the compiled extension when importable, else numpy fallback."""
import os

from . import _fallback

kernels = _fallback
COMPILED = False

if not os.environ.get("GRIDSTAB_PURE_PYTHON"):
    try:
        from . import _core as kernels  # noqa: F811
        COMPILED = True
    except ImportError:
        pass

BACKEND = "cython" if COMPILED else "python"
