"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded. Setting ``GMSHAPE_PURE_PYTHON=1`` forces the
numpy path.
"""

import os

from . import _kernels_py

if os.environ.get("GMSHAPE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

log_mixture_pdf = _impl.log_mixture_pdf
nll_grad = _impl.nll_grad
silhouette_loss = _impl.silhouette_loss
rasterize_triangles = _impl.rasterize_triangles
softmin_rows = _impl.softmin_rows


def compiled_module():
    """Return the compiled kernel module, or None if it is not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
