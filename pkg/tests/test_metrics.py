import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from layoutmrc.kernels import lcs_length
from layoutmrc.metrics import (
    MetricsError,
    bleu_n,
    cider,
    cider_per_pair,
    evaluate,
    evaluate_pairs,
    exact_match,
    metric_tokens,
    rouge_l,
    rouge_l_pair,
)

from goldens import GOLDEN_5, GOLDEN_5_CIDER_PER_PAIR, MULTI_REF, PAIRS_5


def test_tokens_lowercase_and_punctuation():
    assert metric_tokens("The Cat, sat.") == ["the", "cat", "sat"]
    assert metric_tokens("77.3% of 1,200") == ["77.3", "%", "of", "1,200"]


def test_goldens_five_pairs():
    report = evaluate_pairs(PAIRS_5)
    for name, want in GOLDEN_5.items():
        assert abs(getattr(report, name) - want) < 1e-3, name
    assert cider_per_pair(PAIRS_5) == pytest.approx(GOLDEN_5_CIDER_PER_PAIR, abs=1e-6)


def test_goldens_multi_reference():
    assert bleu_n(MULTI_REF, 1) == pytest.approx(100.0, abs=1e-3)
    assert bleu_n(MULTI_REF, 2) == pytest.approx(85.2803, abs=1e-3)
    assert bleu_n(MULTI_REF, 3) == pytest.approx(56.6516, abs=1e-3)
    # the reference scorer adds a tiny epsilon to zero counts (0.0078 here); we do not
    assert bleu_n(MULTI_REF, 4) == 0.0
    assert rouge_l(MULTI_REF) == pytest.approx(94.3769, abs=1e-3)
    assert cider(MULTI_REF) == pytest.approx(3.1769, abs=1e-3)


def test_identity_corpus_is_exactly_100():
    pairs = [(a, [a]) for a in ("the cat sat on the mat", "revenue was 45.2 million dollars",
                                "a b c d e")]
    for n in range(1, 5):
        assert bleu_n(pairs, n) == 100.0
    assert rouge_l(pairs) == 100.0
    assert exact_match(pairs) == 100.0


def test_disjoint_scores_zero():
    pairs = [("alpha beta", ["gamma delta"]), ("one two", ["three four"])]
    assert bleu_n(pairs, 1) == 0.0
    assert rouge_l(pairs) == 0.0
    assert cider_per_pair(pairs) == [0.0, 0.0]


def test_bleu_brevity_penalty_hand_case():
    score = bleu_n([("the cat sat", ["the cat sat down"])], 1)
    assert score == pytest.approx(100 * math.exp(1 - 4 / 3))
    assert round(score, 2) == 71.65


def test_bleu_validates_n():
    with pytest.raises(ValueError):
        bleu_n(PAIRS_5, 5)
    with pytest.raises(ValueError):
        bleu_n(PAIRS_5, 0)


def test_rouge_hand_case():
    # coco-caption weighting (beta = 1.2)
    assert rouge_l([("a b c", ["a c"])]) == pytest.approx(100 * 2.44 * (2 / 3) / (1 + 1.44 * 2 / 3))
    assert round(rouge_l([("a b c", ["a c"])]), 2) == 82.99
    # beta^2 = 1.2 weighting
    assert round(rouge_l([("a b c", ["a c"])], beta=math.sqrt(1.2)), 2) == 81.48


def test_rouge_maximizes_over_references():
    assert rouge_l_pair("a b", ["x y", "a b"]) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=12))
def test_rouge_self_is_100(words):
    text = " ".join(words)
    assert rouge_l([(text, [text])]) == 100.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=8), st.lists(st.integers(0, 3), max_size=8))
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == oracles.lcs_brute(a, b)


def test_cider_matches_oracle():
    pairs = [("the cat sat on the mat", ["a cat sat on the mat"]),
             ("dogs run fast", ["the dogs run very fast"]),
             ("profit rose", ["profit rose ten percent", "profit went up"])]
    tok = [(metric_tokens(p), [metric_tokens(r) for r in refs]) for p, refs in pairs]
    assert cider_per_pair(pairs) == pytest.approx(oracles.cider_oracle(tok), abs=1e-9)
    two = pairs[:2]
    tok2 = tok[:2]
    assert cider(two) == pytest.approx(sum(oracles.cider_oracle(tok2)) / 2, abs=1e-9)


def test_cider_order_invariant():
    shuffled = list(PAIRS_5)
    random.Random(3).shuffle(shuffled)
    assert cider(shuffled) == pytest.approx(cider(PAIRS_5), abs=1e-12)


def test_case_invariance():
    upper = [(p.upper(), [r.upper() for r in refs]) for p, refs in PAIRS_5]
    assert evaluate_pairs(upper).scores() == pytest.approx(evaluate_pairs(PAIRS_5).scores())


def test_empty_corpus_rejected():
    for fn in (lambda: bleu_n([], 1), lambda: rouge_l([]), lambda: cider([]), lambda: evaluate_pairs([])):
        with pytest.raises(MetricsError):
            fn()
    with pytest.raises(MetricsError):
        rouge_l([("a", [])])


def test_empty_prediction_rows_are_zero():
    report = evaluate_pairs([("", ["a b"]), ("x y z", ["x y z"])])
    row = report.per_example[0]
    assert all(row[k] == 0.0 for k in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider", "exact_match"))


def test_report_format():
    text = evaluate_pairs(PAIRS_5).format()
    assert "meteor" in text and "n/a" in text
    lines = [line for line in text.splitlines() if line.startswith("METRIC ")]
    assert [line.split()[1] for line in lines] == ["bleu1", "bleu2", "bleu3", "bleu4", "rouge_l",
                                                   "cider", "exact_match"]
    assert float(lines[4].split()[2]) == pytest.approx(GOLDEN_5["rouge_l"], abs=1e-4)


def test_evaluate_files(tmp_path):
    preds = tmp_path / "p.txt"
    refs = tmp_path / "r.txt"
    preds.write_text("a b c\nthe cat\n")
    refs.write_text("a b c\nthe cat\n")
    report = evaluate(preds, refs)
    assert report.rouge_l == 100.0 and report.exact_match == 100.0
    refs.write_text("a b c\nthe cat\nextra\n")
    with pytest.raises(MetricsError, match="2 predictions vs 3 references"):
        evaluate(preds, refs)


def test_identical_files_long_answers(tmp_path):
    lines = ["the revenue of acme was 45.2 million", "the chart shows annual growth of sales"]
    p = tmp_path / "p.txt"
    p.write_text("\n".join(lines) + "\n")
    report = evaluate(p, p)
    assert report.bleu4 == 100.0 and report.rouge_l == 100.0 and report.exact_match == 100.0
