"""Kernel backend selection.

The hot per-tick plant math exists twice: a Cython extension
(`_kernels_cy`) and a pure-Python mirror (`_kernels_py`).  The extension is
used when it imported cleanly; COMPLIANCE_LAB_BACKEND=pure|cython forces a
choice (forcing cython on a build without the extension is an error).
"""

import os

from . import _kernels_py

_requested = os.environ.get("COMPLIANCE_LAB_BACKEND", "auto").lower()

if _requested not in ("auto", "cython", "pure"):
    raise RuntimeError(
        f"COMPLIANCE_LAB_BACKEND must be auto, cython or pure, got {_requested!r}"
    )

if _requested == "pure":
    kernels = _kernels_py
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[no-redef]
    except ImportError:
        if _requested == "cython":
            raise RuntimeError(
                "COMPLIANCE_LAB_BACKEND=cython but the compiled kernel "
                "extension is not available"
            ) from None
        kernels = _kernels_py

BACKEND_NAME = kernels.BACKEND_NAME
