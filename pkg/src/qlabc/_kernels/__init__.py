"""Hot evaluation kernels with backend selection at import time.

The compiled Cython extension is preferred; the numpy fallback is used
when the extension is unavailable or when ``QLABC_PURE_PYTHON`` is set
in the environment (useful for benchmarking and debugging). Both
backends implement the same two functions with identical numerics.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("QLABC_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
ppoly_eval = _impl.ppoly_eval
additive_eval = _impl.additive_eval
additive_jac = _impl.additive_jac
interp_multilinear = _impl.interp_multilinear

__all__ = ["BACKEND", "additive_eval", "additive_jac", "interp_multilinear", "ppoly_eval"]
