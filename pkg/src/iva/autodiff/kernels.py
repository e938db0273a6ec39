"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting
``IVA_PURE_PYTHON=1`` forces the numpy fallback.  Both backends are
exposed so tests and the benchmark can compare them directly.
"""
import logging
import os

from . import _kernels_py as python_backend

logger = logging.getLogger(__name__)

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("IVA_PURE_PYTHON", "") in ("", "0"):
    active = compiled_backend
else:
    active = python_backend

logger.debug("kernel backend: %s", active.BACKEND)


def backend_name():
    return active.BACKEND


def use_backend(name):
    """Switch the process-wide backend ("cython" or "python")."""
    global active
    if name == "python":
        active = python_backend
    elif name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        active = compiled_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    return active
