"""Select the compiled kernels when available, else the numpy fallback.

Set ``GMC_BACKEND=python`` to force the fallback even if the extension is built.
"""

import os

from . import _fallback

_kernels = None
if os.environ.get("GMC_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:  # extension not built
        _kernels = None

BACKEND = "cython" if _kernels is not None else "python"
_impl = _kernels if _kernels is not None else _fallback

sparse_project = _impl.sparse_project
solve_lower = _impl.solve_lower
solve_lower_t = _impl.solve_lower_t
