"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``PATGEN_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py as python

compiled = None
if os.environ.get("PATGEN_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

backend = compiled if compiled is not None else python
BACKEND_NAME = "compiled" if compiled is not None else "python"

hamming = backend.hamming
penalty = backend.penalty
