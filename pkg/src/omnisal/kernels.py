"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``OMNISAL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("OMNISAL_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

bilinear_sample = _impl.bilinear_sample
scatter_add = _impl.scatter_add
idt_scan = _impl.idt_scan
