"""Kernel backend selection.

``TAILMDN_BACKEND=numpy`` forces the pure-numpy kernels; anything else (or
unset) uses numba when it can be imported.
"""

import os
import warnings

BACKEND_ENV = "TAILMDN_BACKEND"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def requested_backend():
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        warnings.warn(f"unknown {BACKEND_ENV}={value!r}, falling back to numba")
        value = "numba"
    if value == "numba" and not HAVE_NUMBA:
        return "numpy"
    return value


BACKEND = requested_backend()
