"""Hot query-path kernels with a selectable backend.

Set ``BILAYERPQ_KERNELS=numpy`` to force the pure-NumPy path.  By default the
numba backend is used when numba imports cleanly.  Both backends implement
the same four functions with identical semantics:

* ``traverse_cells``: ascending-key cell enumeration under an entry budget,
* ``scan_global``: per-candidate distances against global fine codebooks,
* ``scan_local``: per-candidate distances against cell-local codebooks,
* ``scan_tables``: per-candidate distances from precomputed lookup tables.
"""

import os

_requested = os.environ.get("BILAYERPQ_KERNELS", "auto").strip().lower() or "auto"
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"BILAYERPQ_KERNELS must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_backend as _impl

        BACKEND = "numpy"

traverse_cells = _impl.traverse_cells
scan_global = _impl.scan_global
scan_local = _impl.scan_local
scan_tables = _impl.scan_tables


def get_backend(name: str):
    """Return a specific backend module (used by tests and benchmarks)."""
    if name == "numpy":
        from . import numpy_backend

        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")
