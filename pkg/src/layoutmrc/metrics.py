"""Generative-QA metrics following coco-caption conventions.

* BLEU-n: corpus-level modified n-gram precision with brevity penalty against
  the closest reference length.
* ROUGE-L: LCS precision/recall (each maximized over references) combined with
  ``F = (1 + beta^2) P R / (R + beta^2 P)``, beta = 1.2, averaged over pairs.
* CIDEr-D: TF-IDF n-gram cosine (n = 1..4) with count clipping and a Gaussian
  length penalty (sigma = 6), times 10; IDF comes from the evaluation references.

Scores other than CIDEr are reported on a 0-100 scale. Text is lowercased and
split like the serializer; standalone punctuation is dropped.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

from .kernels import lcs_length
from .serializer import split_pieces

PUNCTUATION = frozenset(list(".,?!:;-'\"`()[]{}") + ["--", "..."])

Pair = tuple[str, Sequence[str]]  # (prediction, references)


class MetricsError(ValueError):
    pass


def metric_tokens(text: str) -> list[str]:
    return [t for t in split_pieces(text) if t not in PUNCTUATION]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(pairs: Sequence[Pair]) -> None:
    if not pairs:
        raise MetricsError("empty evaluation corpus")
    for i, (_, refs) in enumerate(pairs):
        if isinstance(refs, str) or len(refs) == 0:
            raise MetricsError(f"pair {i}: references must be a non-empty list of strings")


# ------------------------------------------------------------------ BLEU


@dataclass
class _BleuStats:
    correct: list[int]
    guess: list[int]
    testlen: int
    reflen: int


def _bleu_stats(pred: list[str], refs: list[list[str]], max_n: int) -> _BleuStats:
    correct, guess = [], []
    for n in range(1, max_n + 1):
        cand = _ngrams(pred, n)
        max_ref: Counter = Counter()
        for r in refs:
            for g, c in _ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], c)
        correct.append(sum(min(c, max_ref[g]) for g, c in cand.items()))
        guess.append(max(0, len(pred) - n + 1))
    testlen = len(pred)
    reflen = min((abs(len(r) - testlen), len(r)) for r in refs)[1]
    return _BleuStats(correct, guess, testlen, reflen)


def _bleu_from_stats(stats: Iterable[_BleuStats], n: int) -> float:
    correct = [0] * n
    guess = [0] * n
    testlen = reflen = 0
    for s in stats:
        for k in range(n):
            correct[k] += s.correct[k]
            guess[k] += s.guess[k]
        testlen += s.testlen
        reflen += s.reflen
    if testlen == 0 or any(c == 0 for c in correct):
        return 0.0
    log_p = sum(math.log(c / g) for c, g in zip(correct, guess)) / n
    score = math.exp(log_p)
    if testlen < reflen:
        score *= math.exp(1.0 - reflen / testlen)
    return 100.0 * score


def bleu_n(pairs: Sequence[Pair], n: int) -> float:
    """Corpus BLEU-n (cumulative, uniform weights) on a 0-100 scale."""
    if not 1 <= n <= 4:
        raise MetricsError("n must be between 1 and 4")
    _check(pairs)
    stats = [_bleu_stats(metric_tokens(p), [metric_tokens(r) for r in refs], n) for p, refs in pairs]
    return _bleu_from_stats(stats, n)


# --------------------------------------------------------------- ROUGE-L

ROUGE_BETA = 1.2


def _to_ids(a: list[str], b: list[str]) -> tuple[list[int], list[int]]:
    table: dict[str, int] = {}
    ia = [table.setdefault(t, len(table)) for t in a]
    ib = [table.setdefault(t, len(table)) for t in b]
    return ia, ib


def rouge_l_pair(pred: str, refs: Sequence[str], beta: float = ROUGE_BETA) -> float:
    cand = metric_tokens(pred)
    if not cand:
        return 0.0
    precs, recs = [], []
    for ref in refs:
        r = metric_tokens(ref)
        if not r:
            precs.append(0.0)
            recs.append(0.0)
            continue
        lcs = lcs_length(*_to_ids(cand, r))
        precs.append(lcs / len(cand))
        recs.append(lcs / len(r))
    p, r = max(precs), max(recs)
    if p == 0 or r == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def rouge_l(pairs: Sequence[Pair], beta: float = ROUGE_BETA) -> float:
    _check(pairs)
    return 100.0 * sum(rouge_l_pair(p, refs, beta) for p, refs in pairs) / len(pairs)


# ----------------------------------------------------------------- CIDEr

CIDER_N = 4
CIDER_SIGMA = 6.0


def _cook(tokens: list[str]) -> Counter:
    counts: Counter = Counter()
    for n in range(1, CIDER_N + 1):
        counts.update(_ngrams(tokens, n))
    return counts


def _cider_vec(counts: Counter, df: dict, log_n_docs: float):
    vec = [dict() for _ in range(CIDER_N)]
    norm = [0.0] * CIDER_N
    length = 0
    for g, tf in counts.items():
        n = len(g) - 1
        w = tf * (log_n_docs - math.log(max(1.0, df.get(g, 0.0))))
        vec[n][g] = w
        norm[n] += w * w
        if n == 1:  # coco-caption measures length in bigrams
            length += tf
    return vec, [math.sqrt(x) for x in norm], length


def _cider_sim(hyp, ref) -> list[float]:
    vh, nh, lh = hyp
    vr, nr, lr = ref
    delta = float(lh - lr)
    penalty = math.exp(-(delta ** 2) / (2 * CIDER_SIGMA ** 2))
    out = []
    for n in range(CIDER_N):
        val = sum(min(w, vr[n].get(g, 0.0)) * vr[n].get(g, 0.0) for g, w in vh[n].items())
        if nh[n] != 0 and nr[n] != 0:
            val /= nh[n] * nr[n]
        out.append(val * penalty)
    return out


def cider_per_pair(pairs: Sequence[Pair]) -> list[float]:
    _check(pairs)
    crefs = [[_cook(metric_tokens(r)) for r in refs] for _, refs in pairs]
    ctest = [_cook(metric_tokens(p)) for p, _ in pairs]
    df: dict = defaultdict(float)
    for refs in crefs:
        for g in set(g for r in refs for g in r):
            df[g] += 1
    log_n = math.log(float(len(crefs)))
    scores = []
    for test, refs in zip(ctest, crefs):
        hv = _cider_vec(test, df, log_n)
        total = [0.0] * CIDER_N
        for r in refs:
            for n, v in enumerate(_cider_sim(hv, _cider_vec(r, df, log_n))):
                total[n] += v
        scores.append(10.0 * (sum(total) / CIDER_N) / len(refs))
    return scores


def cider(pairs: Sequence[Pair]) -> float:
    """Corpus CIDEr-D (mean of per-pair scores)."""
    s = cider_per_pair(pairs)
    return sum(s) / len(s)


# ----------------------------------------------------------- exact match


def exact_match(pairs: Sequence[Pair]) -> float:
    _check(pairs)
    hits = sum(any(metric_tokens(p) == metric_tokens(r) for r in refs) for p, refs in pairs)
    return 100.0 * hits / len(pairs)


# ---------------------------------------------------------------- report

METRIC_NAMES = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider", "exact_match")
NOT_COMPUTED = ("meteor", "bertscore")


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    exact_match: float
    per_example: list[dict] = field(default_factory=list)

    def scores(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def format(self) -> str:
        lines = [f"{'metric':<12} {'score':>10}", "-" * 23]
        lines += [f"{name:<12} {value:>10.2f}" for name, value in self.scores().items()]
        lines += [f"{name:<12} {'n/a':>10}" for name in NOT_COMPUTED]
        lines.append("")
        lines += [f"METRIC {name} {value:.6f}" for name, value in self.scores().items()]
        return "\n".join(lines) + "\n"


def evaluate_pairs(pairs: Sequence[Pair]) -> EvalReport:
    _check(pairs)
    tok = [(metric_tokens(p), [metric_tokens(r) for r in refs]) for p, refs in pairs]
    stats = [_bleu_stats(p, refs, 4) for p, refs in tok]
    ciders = cider_per_pair(pairs)
    per_example = []
    for i, (pred, refs) in enumerate(pairs):
        row = {"prediction": pred, "references": list(refs)}
        for n in range(1, 5):
            row[f"bleu{n}"] = _bleu_from_stats([stats[i]], n)
        row["rouge_l"] = 100.0 * rouge_l_pair(pred, refs)
        row["cider"] = ciders[i]
        row["exact_match"] = 100.0 * any(tok[i][0] == r for r in tok[i][1])
        per_example.append(row)
    n = len(pairs)
    return EvalReport(
        bleu1=_bleu_from_stats(stats, 1),
        bleu2=_bleu_from_stats(stats, 2),
        bleu3=_bleu_from_stats(stats, 3),
        bleu4=_bleu_from_stats(stats, 4),
        rouge_l=sum(r["rouge_l"] for r in per_example) / n,
        cider=sum(ciders) / n,
        exact_match=sum(r["exact_match"] for r in per_example) / n,
        per_example=per_example,
    )


def read_lines(path: str | PathLike) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    if not text:
        return []
    return text[:-1].split("\n") if text.endswith("\n") else text.split("\n")


def evaluate(predictions: str | PathLike, references: str | PathLike) -> EvalReport:
    """Score a predictions file against a references file, one answer per line."""
    preds = read_lines(predictions)
    refs = read_lines(references)
    if len(preds) != len(refs):
        raise MetricsError(f"line count mismatch: {len(preds)} predictions vs {len(refs)} references")
    return evaluate_pairs([(p, [r]) for p, r in zip(preds, refs)])
