"""Select the compiled kernels when available, else the numpy fallback.

Set ``CQ_PURE_PYTHON=1`` to force the fallback (used by the benchmark and by
the backend-equivalence tests).
"""

import os

from curvquot import _pykernels

python_kernels = _pykernels

try:
    from curvquot import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("CQ_PURE_PYTHON", "") in ("", "0"):
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"
