"""Backend selection for the sampling hot loops.

Imports the compiled extension when available, otherwise the numpy
reference implementation.  Set ``GUMBOLT_KERNELS=numpy`` (or ``cython``) to
force a backend; forcing ``cython`` raises if the extension is missing.
``BACKEND`` records what got selected.
"""

import os

from gumbolt.kernels import reference

_forced = os.environ.get("GUMBOLT_KERNELS", "").strip().lower()

if _forced == "numpy":
    _impl = reference
    BACKEND = "numpy"
else:
    try:
        from gumbolt.kernels import _gibbs as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = reference
        BACKEND = "numpy"

gibbs_sweeps = _impl.gibbs_sweeps
tempered_sweeps = _impl.tempered_sweeps

__all__ = ["BACKEND", "gibbs_sweeps", "tempered_sweeps", "reference"]
