"""Pick the compiled kernels when importable, else the numpy fallback.

Set ``ARGMAX_BAYES_PURE=1`` to force the fallback (used by the benchmark
and by the parity tests).
"""

import os

from . import _fallback

BACKEND = "python"
basis_matrix = _fallback.basis_matrix
local_linear = _fallback.local_linear

if os.environ.get("ARGMAX_BAYES_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        basis_matrix = _kernels.basis_matrix
        local_linear = _kernels.local_linear
