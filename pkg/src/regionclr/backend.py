"""Kernel backend selection.

The six hot kernels (softmax, layernorm, GELU forward/backward) exist twice:

* ``regionclr._kernels_c`` -- Cython extension, single C pass per row
* ``regionclr._kernels_py`` -- numpy fallback, several vector ops per call

The compiled module is preferred when importable. Matrix products are not
part of this surface: both backends leave them on numpy's BLAS, which is
already compiled. Set REGIONCLR_KERNELS=python or =compiled to force a
backend (``compiled`` raises if the extension is unavailable).
"""

import os

from . import _kernels_py

_requested = os.environ.get("REGIONCLR_KERNELS", "auto").strip().lower()

if _requested not in ("auto", "compiled", "python"):
    raise ImportError(
        f"REGIONCLR_KERNELS must be 'auto', 'compiled' or 'python', got {_requested!r}"
    )

if _requested == "python":
    _impl = _kernels_py
    ACTIVE = "python"
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]

        ACTIVE = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "REGIONCLR_KERNELS=compiled but the regionclr._kernels_c "
                "extension is not built; reinstall the package or use "
                "REGIONCLR_KERNELS=python"
            )
        _impl = _kernels_py
        ACTIVE = "python"

softmax_rows_fwd = _impl.softmax_rows_fwd
softmax_rows_bwd = _impl.softmax_rows_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd


def active_backend() -> str:
    """Name of the kernel implementation in use: 'compiled' or 'python'."""
    return ACTIVE
