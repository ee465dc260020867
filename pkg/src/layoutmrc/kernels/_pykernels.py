"""Pure-numpy reference versions of the hot kernels.

Used when the compiled extension is unavailable or when
``LAYOUTMRC_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np


def layer_norm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_backward(dy, xhat, rstd, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    g = dy * gain
    h = xhat.shape[1]
    dx = (g - g.sum(axis=1, keepdims=True) / h
          - xhat * (g * xhat).sum(axis=1, keepdims=True) / h) * rstd[:, None]
    return dx, dgain, dbias


def lcs_length(a, b):
    """Length of the longest common subsequence of two int sequences."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            if x == y:
                cur.append(prev[j] + 1)
            else:
                cur.append(max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]
