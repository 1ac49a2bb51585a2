"""Backend dispatch for the hot kernels.

``VOXMIX_BACKEND`` selects the implementation:

* ``auto`` (default) — numba when importable, else pure numpy
* ``numba``          — require numba, fail loudly if missing
* ``numpy``          — force the pure-numpy fallback

The two implementations share contracts but not bit-level float behavior;
outputs are deterministic per backend, not across backends.
"""
from __future__ import annotations

import os

from . import numpy_impl

_choice = os.environ.get("VOXMIX_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"VOXMIX_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"

affine_trilinear = _impl.affine_trilinear
affine_nearest = _impl.affine_nearest
jacobi_fill = _impl.jacobi_fill


def backend_name() -> str:
    return BACKEND
