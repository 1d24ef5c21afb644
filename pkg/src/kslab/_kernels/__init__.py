"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set ``KSLAB_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels as pure

compiled = None
if os.environ.get("KSLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else pure
BACKEND = "cython" if compiled is not None else "python"

shift_rows = _impl.shift_rows
eval_points = _impl.eval_points
network_simplex = _impl.network_simplex

__all__ = ["BACKEND", "shift_rows", "eval_points", "network_simplex", "pure", "compiled"]
