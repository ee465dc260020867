"""Forward/backward pairs for the transformer building blocks.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the cache and the upstream gradient, accumulates parameter gradients into the
``grads`` dict under the same names as ``params``, and returns the input
gradient(s). Arrays are float64 throughout.
"""

from __future__ import annotations

import numpy as np

from . import kernels

LN_EPS = 1e-5


def accumulate(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, dtype=np.float64)


# ---------------------------------------------------------------- linear


def linear_forward(x, w, b):
    return x @ w + b


def linear_backward(x, w, dy, grads, wname, bname):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    accumulate(grads, wname, x2.T @ dy2)
    accumulate(grads, bname, dy2.sum(axis=0))
    return dy @ w.T


# ------------------------------------------------------------ layer norm


def layer_norm_forward(x, gain, bias):
    y, xhat, rstd = kernels.layer_norm_forward(x, gain, bias, LN_EPS)
    return y, (xhat, rstd)


def layer_norm_backward(cache, gain, dy, grads, gname, bname):
    xhat, rstd = cache
    dx, dg, db = kernels.layer_norm_backward(dy, xhat, rstd, gain)
    accumulate(grads, gname, dg)
    accumulate(grads, bname, db)
    return dx


# --------------------------------------------------------------- softmax


def masked_softmax(scores, valid):
    """Softmax over the last axis restricted to ``valid``.

    Rows with no valid entry come out all-zero instead of NaN.
    """
    if scores.shape[-1] == 0:
        return np.zeros_like(scores)
    s = np.where(valid, scores, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(s - m)
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.where(denom > 0, denom, 1.0)


def softmax_backward(probs, dprobs):
    return probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------- dropout


def dropout_mask(shape, rate, rng):
    if rate <= 0.0 or rng is None:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def apply_mask(x, mask):
    return x if mask is None else x * mask


# ------------------------------------------------------- relative bias


def relative_buckets(tq: int, tk: int, max_distance: int) -> np.ndarray:
    """Bucket index ``clip(j - i, -D, D) + D`` for each (query i, key j)."""
    rel = np.arange(tk)[None, :] - np.arange(tq)[:, None]
    return np.clip(rel, -max_distance, max_distance) + max_distance


# ------------------------------------------------------------ attention


ATTN_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def _split_heads(x, n_heads):
    b, t, h = x.shape
    return x.reshape(b, t, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, nh, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, nh * dh)


def attention_forward(params, prefix, xq, xkv, valid, n_heads, bias=None, drop=None):
    """Multi-head attention.

    ``valid`` broadcasts to (B, heads, Tq, Tk) and marks attendable keys;
    ``bias`` (heads, Tq, Tk) is added to the scaled scores.
    """
    p = {k: params[f"{prefix}.{k}"] for k in ATTN_KEYS}
    q = _split_heads(xq @ p["wq"] + p["bq"], n_heads)
    k = _split_heads(xkv @ p["wk"] + p["bk"], n_heads)
    v = _split_heads(xkv @ p["wv"] + p["bv"], n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if bias is not None:
        scores = scores + bias[None]
    probs = masked_softmax(scores, valid)
    ctx = _merge_heads(probs @ v)
    out = apply_mask(ctx @ p["wo"] + p["bo"], drop)
    cache = (prefix, xq, xkv, q, k, v, probs, ctx, scale, n_heads, drop)
    return out, cache


def attention_backward(params, cache, dout, grads):
    """Returns ``(dxq, dxkv, dscores_summed_over_batch)``."""
    prefix, xq, xkv, q, k, v, probs, ctx, scale, n_heads, drop = cache
    dout = apply_mask(dout, drop)
    dctx = linear_backward(ctx, params[f"{prefix}.wo"], dout, grads, f"{prefix}.wo", f"{prefix}.bo")
    dctx = _split_heads(dctx, n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(probs, dprobs)
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
    dxq = linear_backward(xq, params[f"{prefix}.wq"], _merge_heads(dq), grads, f"{prefix}.wq", f"{prefix}.bq")
    dxkv = linear_backward(xkv, params[f"{prefix}.wk"], _merge_heads(dk), grads, f"{prefix}.wk", f"{prefix}.bk")
    dxkv = dxkv + linear_backward(
        xkv, params[f"{prefix}.wv"], _merge_heads(dv), grads, f"{prefix}.wv", f"{prefix}.bv"
    )
    return dxq, dxkv, dscores.sum(axis=0)


# ------------------------------------------------------------------ FFN


def ffn_forward(params, prefix, x, drop=None):
    pre = x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"]
    act = np.maximum(pre, 0.0)
    out = apply_mask(act @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"], drop)
    return out, (prefix, x, pre, act, drop)


def ffn_backward(params, cache, dout, grads):
    prefix, x, pre, act, drop = cache
    dout = apply_mask(dout, drop)
    dact = linear_backward(act, params[f"{prefix}.w2"], dout, grads, f"{prefix}.w2", f"{prefix}.b2")
    dpre = dact * (pre > 0)
    return linear_backward(x, params[f"{prefix}.w1"], dpre, grads, f"{prefix}.w1", f"{prefix}.b1")
