"""Backend selection for the numerical hot loops.

The compiled extension is used when it has been built; otherwise the pure
Python implementation is loaded. Set ``ICPS_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

if os.environ.get("ICPS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
cartpole_step = _impl.cartpole_step
gae = _impl.gae
rate_rows = _impl.rate_rows

__all__ = ["BACKEND", "cartpole_step", "gae", "rate_rows"]
