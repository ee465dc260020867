"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the package's numerical code paths: loops over scalars,
explicit sums, no shared helpers.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def affine(x, W, b):
    """y_k = sum_i x_i W[i, k] + b_k, written out."""
    out = []
    for k in range(W.shape[1]):
        acc = float(b[k])
        for i in range(W.shape[0]):
            acc += float(x[i]) * float(W[i, k])
        out.append(acc)
    return np.array(out)


def layer_norm(v, gain, bias, eps=1e-5):
    n = len(v)
    mean = sum(float(a) for a in v) / n
    var = sum((float(a) - mean) ** 2 for a in v) / n
    return np.array([(float(a) - mean) / math.sqrt(var + eps) * gain[i] + bias[i] for i, a in enumerate(v)])


def fused_row(token, pos, seg, loc, app, gain, bias):
    """Five-way sum then LN; absent terms passed as None."""
    total = np.array(token, dtype=float).copy()
    for term in (pos, seg, loc, app):
        if term is not None:
            total = total + np.asarray(term, dtype=float)
    return layer_norm(total, gain, bias)


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def attention_single_head(xq, xkv, Wq, bq, Wk, bk, Wv, bv, Wo, bo, allowed):
    """One-head attention with explicit per-query loops. ``allowed[i][j]`` gates keys."""
    q = [affine(x, Wq, bq) for x in xq]
    k = [affine(x, Wk, bk) for x in xkv]
    v = [affine(x, Wv, bv) for x in xkv]
    d = len(q[0])
    outs = []
    for i, qi in enumerate(q):
        idx = [j for j in range(len(k)) if allowed[i][j]]
        scores = [sum(qi[t] * k[j][t] for t in range(d)) / math.sqrt(d) for j in idx]
        w = softmax(scores)
        ctx = np.zeros(d)
        for wj, j in zip(w, idx):
            ctx = ctx + wj * v[j]
        outs.append(affine(ctx, Wo, bo))
    return outs


def sigmoid(u):
    return 1.0 / (1.0 + math.exp(-u))


def bce(P, s):
    """Mean of -(s log P + (1-s) log(1-P)) over paired lists."""
    terms = []
    for p, t in zip(P, s):
        term = 0.0
        if t > 0:
            term += t * math.log(p)
        if t < 1:
            term += (1 - t) * math.log(1 - p)
        terms.append(-term)
    return sum(terms) / len(terms) if terms else 0.0


def cross_entropy(logits_rows, targets):
    total = 0.0
    for row, t in zip(logits_rows, targets):
        m = max(row)
        lse = m + math.log(sum(math.exp(x - m) for x in row))
        total += lse - row[t]
    return total / len(targets)


def brute_force_label(piece: str, roi_id: int, answer_pieces: list[str], relevant: set[int]) -> int:
    in_answer = any(piece == a for a in answer_pieces)
    in_relevant = any(roi_id == r for r in relevant)
    return 1 if (in_answer and in_relevant) else 0


def lcs_brute(a, b):
    """LCS by enumerating subsequences of the shorter sequence (small inputs only)."""
    if len(a) > len(b):
        a, b = b, a
    for size in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(any(x == y for y in it) for x in sub):
                return size
    return 0


def cider_oracle(pairs_tokens, n_max=4, sigma=6.0):
    """Straight TF-IDF cosine per n, Gaussian length penalty on bigram counts, x10.

    ``pairs_tokens`` is a list of (pred_tokens, [ref_tokens, ...]).
    """
    def grams(toks, n):
        out = {}
        for i in range(len(toks) - n + 1):
            g = tuple(toks[i:i + n])
            out[g] = out.get(g, 0) + 1
        return out

    n_docs = len(pairs_tokens)
    df = {}
    for _, refs in pairs_tokens:
        seen = set()
        for r in refs:
            for n in range(1, n_max + 1):
                seen.update(grams(r, n))
        for g in seen:
            df[g] = df.get(g, 0) + 1

    def weights(toks, n):
        return {g: c * (math.log(n_docs) - math.log(max(1.0, df.get(g, 0)))) for g, c in grams(toks, n).items()}

    scores = []
    for pred, refs in pairs_tokens:
        per_ref = []
        for r in refs:
            delta = max(0, len(pred) - 1) - max(0, len(r) - 1)
            pen = math.exp(-delta * delta / (2 * sigma * sigma))
            sims = []
            for n in range(1, n_max + 1):
                wp, wr = weights(pred, n), weights(r, n)
                num = sum(min(w, wr.get(g, 0.0)) * wr.get(g, 0.0) for g, w in wp.items())
                npn = math.sqrt(sum(w * w for w in wp.values()))
                nrn = math.sqrt(sum(w * w for w in wr.values()))
                sims.append((num / (npn * nrn) if npn and nrn else num) * pen)
            per_ref.append(sum(sims) / n_max)
        scores.append(10.0 * sum(per_ref) / len(refs))
    return scores


def finite_difference_grads(params, loss_fn, eps=1e-5, names=None):
    """Central differences for every element of every (named) tensor."""
    out = {}
    for name in names or list(params):
        p = params[name]
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            plus = loss_fn()
            p[idx] = old - eps
            minus = loss_fn()
            p[idx] = old
            num[idx] = (plus - minus) / (2 * eps)
        out[name] = num
    return out


def relative_error(a, b, floor=0.0):
    """||a - b|| / max(||a|| + ||b||, floor); 0 when both vanish.

    The floor keeps gradients that are exactly zero in theory (and roundoff in
    practice) from turning into noise-over-noise ratios.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)
