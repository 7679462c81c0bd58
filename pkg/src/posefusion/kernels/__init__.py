"""Backend dispatch for the hot objective/gradient kernels.

The environment variable POSEFUSION_BACKEND selects the implementation:

* ``auto`` (default): numba JIT if importable, else the numpy fallback
* ``numba``: require the JIT backend (ImportError if numba is missing)
* ``numpy``: force the pure-numpy fallback

Both backends implement the same math and are agreement-tested; see
benchmarks/bench_backends.py for a speed comparison.
"""

from __future__ import annotations

import os

from .. import objective as _numpy_backend

_requested = os.environ.get("POSEFUSION_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"POSEFUSION_BACKEND must be auto, numba, or numpy; got {_requested!r}"
    )

if _requested in ("auto", "numba"):
    try:
        from . import numba_backend as _impl

        _active = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _numpy_backend
        _active = "numpy"
else:
    _impl = _numpy_backend
    _active = "numpy"


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _active


def objective_and_gradient(theta, trans, prob):
    """Total energy plus gradients (g_theta (T,24,3), g_trans (T,3))."""
    return _impl.objective_and_gradient(theta, trans, prob)


def objective_value(theta, trans, prob):
    """Total energy only."""
    return _impl.objective_value(theta, trans, prob)
