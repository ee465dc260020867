"""Hot kernels with a compiled core and a numpy fallback.

The compiled ``_ckernels`` extension is preferred; set
``LAYOUTMRC_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("LAYOUTMRC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    """Row-wise layer norm over the last axis.

    Returns ``(y, xhat, rstd)``; ``xhat`` and ``rstd`` are the cache needed by
    :func:`layer_norm_backward`. Leading axes are flattened and restored.
    """
    shape = x.shape
    x2 = np.ascontiguousarray(x, dtype=np.float64).reshape(-1, shape[-1])
    y, xhat, rstd = _impl.layer_norm_forward(
        x2,
        np.ascontiguousarray(gain, dtype=np.float64),
        np.ascontiguousarray(bias, dtype=np.float64),
        float(eps),
    )
    return np.asarray(y).reshape(shape), np.asarray(xhat), np.asarray(rstd)


def layer_norm_backward(dy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray, gain: np.ndarray):
    shape = dy.shape
    dy2 = np.ascontiguousarray(dy, dtype=np.float64).reshape(-1, shape[-1])
    dx, dgain, dbias = _impl.layer_norm_backward(
        dy2, xhat, rstd, np.ascontiguousarray(gain, dtype=np.float64)
    )
    return np.asarray(dx).reshape(shape), np.asarray(dgain), np.asarray(dbias)


def lcs_length(a, b) -> int:
    """LCS length of two sequences of integer token ids."""
    return int(_impl.lcs_length(a, b))


__all__ = ["BACKEND", "layer_norm_forward", "layer_norm_backward", "lcs_length"]
