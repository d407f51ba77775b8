"""Backend selection for the pair kernels.

The compiled module is used when it was built; otherwise the numpy version.
Set ``LAPLACE_METRIC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from laplace_metric import _kernels_py

try:
    if os.environ.get("LAPLACE_METRIC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python backend requested")
    from laplace_metric import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

pair_loss = _impl.pair_loss
pair_output_grad = _impl.pair_output_grad
pair_ggn_diag = _impl.pair_ggn_diag


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from laplace_metric import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
