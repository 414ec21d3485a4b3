"""Dispatch to the numba or numpy kernel implementations.

The choice is made once at import from ``TAILMDN_BACKEND``; both modules
stay importable so tests and the benchmark can compare them directly.
"""

import numpy as np

from . import _kernels_numpy as numpy_impl
from ._backend import BACKEND, HAVE_NUMBA

if HAVE_NUMBA:
    from . import _kernels_numba as numba_impl
else:  # pragma: no cover
    numba_impl = None

_impl = numba_impl if BACKEND == "numba" else numpy_impl


def softplus_grad(z):
    # numpy's vectorized exp/log1p beat scalar numba loops here (see the benchmark)
    return numpy_impl.softplus_grad(np.ascontiguousarray(z, dtype=np.float64))


def head_nll(raw, group, y, k, has_tail, scale_floor, beta_floor, want_grad=True):
    return _impl.head_nll(
        np.ascontiguousarray(raw, dtype=np.float64),
        np.ascontiguousarray(group, dtype=np.int64),
        np.ascontiguousarray(y, dtype=np.float64),
        int(k), bool(has_tail), float(scale_floor), float(beta_floor), bool(want_grad),
    )


def gmm_bisect(targets, upper, w, mu, sig, lo, hi, tol=1e-12, max_iter=200):
    return _impl.gmm_bisect(
        np.ascontiguousarray(targets, dtype=np.float64), bool(upper),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(mu, dtype=np.float64),
        np.ascontiguousarray(sig, dtype=np.float64),
        float(lo), float(hi), float(tol), int(max_iter),
    )
