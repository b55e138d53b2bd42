"""Selects the compiled message-passing loop, falling back to numpy.

Set ``PRSL_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by the kernel-agreement tests).
"""
import os

from . import _bp_py

try:
    if os.environ.get("PRSL_PURE_PYTHON"):
        raise ImportError("pure-Python kernel requested")
    from . import _bp_cy
except ImportError:
    _bp_cy = None

BACKENDS = {"python": _bp_py.run_bp}
if _bp_cy is not None:
    BACKENDS["cython"] = _bp_cy.run_bp

#: name of the backend used when none is requested explicitly
DEFAULT_BACKEND = "cython" if _bp_cy is not None else "python"


def run_bp(*args, backend=None):
    try:
        fn = BACKENDS[backend or DEFAULT_BACKEND]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; available: {sorted(BACKENDS)}") from None
    return fn(*args)
