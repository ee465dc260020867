"""Acceptance gate: one PASS/FAIL line per criterion.

Each criterion is a test; the lines are also collected and printed in the
pytest terminal summary. Criterion 10 needs the real corpus and is skipped
unless LAYOUTMRC_REAL_CORPUS points at it.
"""

import copy
import io
import math
import os
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import oracles
from conftest import MICRO, make_doc, paragraph
from goldens import GOLDEN_5, PAIRS_5
from layoutmrc.cli import main as cli_main
from layoutmrc.corpus import QaPair, compute_stats, dump_corpus, load_corpus
from layoutmrc.embedder import appearance_embedding, fuse, location_embedding, EmbeddingTables
from layoutmrc.metrics import bleu_n, cider, evaluate_pairs, exact_match, rouge_l
from layoutmrc.model import (
    ModelConfig,
    decoder_forward,
    encode_batch,
    encoder_stack_forward,
    generate,
    init_params,
    saliency_scores,
)
from layoutmrc.embedder import EncoderBatch, fuse_forward
from layoutmrc.serializer import build_input_sequence, build_vocabulary, normalize_answer, split_pieces
from layoutmrc.synthetic import synthetic_corpus
from layoutmrc.trainer import (
    TrainConfig,
    loss_and_grads,
    multitask_loss,
    nll_loss,
    pseudo_saliency_labels,
    saliency_loss,
    train,
)

RESULTS = []
GRAD_NORM_FLOOR = 1e-6


def report(n, title, ok, detail):
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------------ 1


def test_criterion_1_gradient_suite(micro_setup):
    start = time.perf_counter()
    worst, floored = {}, []
    for mode in ("absolute", "relative_bias"):
        _, _, cfg, params, batch = micro_setup(mode)
        _, grads = loss_and_grads(params, cfg, batch, gamma_sal=1.0)
        num = oracles.finite_difference_grads(
            params, lambda: loss_and_grads(params, cfg, batch, need_grads=False)[0].multi)
        assert set(num) == set(grads) == set(params)
        for name in params:
            key = f"{mode}:{name}"
            worst[key] = oracles.relative_error(grads[name], num[name], floor=GRAD_NORM_FLOOR)
            if np.linalg.norm(grads[name]) + np.linalg.norm(num[name]) < GRAD_NORM_FLOOR:
                floored.append(key)
    elapsed = time.perf_counter() - start
    name, err = max(worst.items(), key=lambda kv: kv[1])
    live_name, live_err = max(((k, v) for k, v in worst.items() if k not in floored), key=lambda kv: kv[1])
    # only the attention key biases may vanish: softmax ignores a shift shared by all keys
    unexpected = [k for k in floored if not k.endswith(".bk")]
    report(1, "gradient suite", err < 1e-3 and elapsed < 30.0 and not unexpected,
           f"{len(worst)} tensors, worst rel err {err:.2e} ({name}), worst nonzero-gradient tensor "
           f"{live_err:.2e} ({live_name}), {elapsed:.1f}s (limits 1e-3, 30s); "
           f"{len(floored)} zero-gradient key biases checked against norm floor {GRAD_NORM_FLOOR:g}"
           + (f"; unexpected zero gradients: {unexpected}" if unexpected else ""))


# ------------------------------------------------------------------ 2


def test_criterion_2_formula_oracles():
    rng = np.random.default_rng(2024)
    H, D = 6, 5
    errs = {}
    W, b, x = rng.normal(size=(4, H)), rng.normal(size=H), rng.random(4)
    errs["location"] = np.abs(location_embedding(x, W, b) - oracles.affine(x, W, b)).max()
    Wa, ba, f = rng.normal(size=(D, H)), rng.normal(size=H), rng.normal(size=D)
    relu = [max(v, 0.0) for v in f]
    errs["appearance"] = np.abs(appearance_embedding(f, Wa, ba) - oracles.affine(relu, Wa, ba)).max()

    (doc,) = synthetic_corpus(1, seed=11, d_app=D)
    vocab = build_vocabulary([doc])
    seq = build_input_sequence(doc.qas[0].question, doc, vocab, 64)
    t = EmbeddingTables.init(rng, len(vocab), H, 64, D, std=0.5)
    fused = fuse(seq, t).matrix
    worst = 0.0
    for k, p in enumerate(seq.positions):
        if p.origin in ("ocr", "roi_label"):
            seg = t.seg_table[p.seg_class.index]
            loc = oracles.affine(p.loc, t.loc_w, t.loc_b)
            app = oracles.affine([max(v, 0.0) for v in p.appearance_ref], t.app_w, t.app_b)
        else:
            seg = loc = app = None
        want = oracles.fused_row(t.token_table[p.token_id], t.pos_table[k], seg, loc, app,
                                 t.ln_gain, t.ln_bias)
        worst = max(worst, np.abs(fused[k] - want).max())
    errs["fused LN"] = worst

    cfg = ModelConfig(**dict(MICRO, D_app=D))
    params = init_params(cfg, len(vocab), seed=1)
    for v in params.values():
        v += rng.normal(0, 0.3, size=v.shape)
    enc = encode_batch(EncoderBatch.from_sequences([seq], D), params, cfg)
    P = saliency_scores(enc, seq, params)
    worst = 0.0
    for k, p in enumerate(seq.positions):
        if p.origin == "ocr":
            u = sum(float(a) * float(c) for a, c in zip(params["sal.w"], enc.hidden[0, k])) + float(params["sal.b"])
            worst = max(worst, abs(P[(p.roi_index, p.token_index)] - oracles.sigmoid(u)))
    errs["saliency score"] = worst

    probs, labels = rng.uniform(0.02, 0.98, 30), rng.integers(0, 2, 30)
    errs["saliency BCE"] = abs(saliency_loss(probs, labels) - oracles.bce(probs, [0.9 * s for s in labels]))
    logits, targets = rng.normal(size=(7, 13)) * 2, rng.integers(0, 13, 7)
    l_nll = nll_loss(logits, targets)
    errs["NLL"] = abs(l_nll - oracles.cross_entropy(logits.tolist(), targets))
    errs["multitask"] = abs(multitask_loss(l_nll, 0.37, 1.0) - (oracles.cross_entropy(logits.tolist(), targets) + 0.37))
    name, err = max(errs.items(), key=lambda kv: kv[1])
    report(2, "formula oracles", err < 1e-6, f"{len(errs)} formulas, worst abs err {err:.1e} ({name}), limit 1e-6")


# ------------------------------------------------------------------ 3


def test_criterion_3_pseudo_labels_exhaustive():
    checked = mismatches = 0
    seen = set()
    for relevant_flags in [(a, b) for a in (False, True) for b in (False, True)]:
        rois = [paragraph(i, ["alpha", "Beta", "77.3%", "gamma"], y=10 + 30 * i) for i in range(2)]
        relevant = frozenset(i for i, flag in enumerate(relevant_flags) if flag)
        qa = QaPair("q", "alpha beta 77.3%", relevant)
        doc = make_doc(rois, [qa])
        vocab = build_vocabulary([doc])
        seq = build_input_sequence(qa.question, doc, vocab, 64)
        labels = pseudo_saliency_labels(seq, qa)
        answer = split_pieces(qa.answer)
        for p in seq.positions:
            if p.origin != "ocr":
                continue
            want = oracles.brute_force_label(p.piece, p.roi_id, answer, set(relevant))
            seen.add((p.piece in answer, p.roi_id in relevant))
            checked += 1
            mismatches += labels[(p.roi_index, p.token_index)] != want
    ok = mismatches == 0 and len(seen) == 4
    report(3, "pseudo-label equivalence", ok,
           f"{checked} positions, {len(seen)}/4 condition combinations covered, {mismatches} mismatches")


# ------------------------------------------------------------------ 4


def test_criterion_4_ablation_reduction():
    corpus = synthetic_corpus(3, seed=4, d_app=MICRO["D_app"])
    vocab = build_vocabulary(corpus)
    worst = 0.0
    for mode in ("absolute", "relative_bias"):
        cfg = ModelConfig(position_mode=mode, **MICRO)
        params = init_params(cfg, len(vocab), seed=2)
        rng = np.random.default_rng(5)
        for v in params.values():
            v += rng.normal(0, 0.3, size=v.shape)
        text_params = copy.deepcopy(params)
        for name in ("emb.seg", "emb.loc_w", "emb.loc_b", "emb.app_w", "emb.app_b"):
            params[name][...] = 0.0
        seqs = [build_input_sequence(d.qas[0].question, d, vocab, cfg.L_max) for d in corpus]
        batch = EncoderBatch.from_sequences(seqs, cfg.D_app)
        dec_in = np.array([[vocab.bos_id, 20, 21, 22]] * len(seqs))
        dec_valid = np.ones(dec_in.shape, dtype=bool)

        def logits(p, b):
            z, _ = fuse_forward(b, p)
            h, _ = encoder_stack_forward(p, cfg, z, b.valid, None)
            return decoder_forward(p, cfg, dec_in, dec_valid, h, b.valid, None)[0]

        full = logits(params, batch)
        text_only = logits(text_params, batch.text_only())
        worst = max(worst, float(np.abs(full - text_only).max()))
    report(4, "ablation reduction", worst < 1e-6, f"max |logit diff| {worst:.1e} over both position modes, limit 1e-6")


# ------------------------------------------------------------------ 5


def test_criterion_5_gamma_zero():
    corpus = synthetic_corpus(4, seed=3, d_app=MICRO["D_app"])
    vocab = build_vocabulary(corpus)
    cfg = ModelConfig(**dict(MICRO, dropout=0.1))
    params = init_params(cfg, len(vocab), seed=0)
    init = copy.deepcopy(params)
    train(corpus, params, cfg, TrainConfig(gamma_sal=0.0, lr=1e-2, batch_size=2, max_epochs=5), vocab)
    unchanged = all(np.array_equal(params[n], init[n]) for n in ("sal.w", "sal.b"))
    others_moved = sum(not np.array_equal(params[n], init[n]) for n in params if not n.startswith("sal."))
    report(5, "gamma=0 equivalence", unchanged and others_moved > 0,
           f"saliency head bit-identical to init: {unchanged}; {others_moved} other tensors updated")


# ------------------------------------------------------------------ 6 and 8


@pytest.fixture(scope="module")
def overfit_run():
    corpus = synthetic_corpus(10, seed=0)
    vocab = build_vocabulary(corpus)
    cfg = ModelConfig()  # desk config
    tcfg = TrainConfig(max_epochs=300, seed=0, gamma_sal=1.0)
    params = init_params(cfg, len(vocab), seed=0)
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        result = train(corpus, params, cfg, tcfg, vocab, log_stream=io.StringIO())
        answers = [(generate(qa.question, doc, params, cfg, vocab), qa.answer)
                   for doc in corpus for qa in doc.qas]
    elapsed = time.perf_counter() - start
    return corpus, vocab, cfg, params, result, answers, elapsed


def test_criterion_6_overfit(overfit_run):
    _, _, cfg, _, result, answers, elapsed = overfit_run
    nll = result.trace[-1].nll
    exact = sum(pred == normalize_answer(ans) for pred, ans in answers)
    ok = nll < 0.05 and exact >= 9 and elapsed < 300.0
    report(6, "overfit", ok, f"H={cfg.H} {cfg.n_enc_layers}+{cfg.n_dec_layers} layers, 300 epochs, "
           f"final L_nll {nll:.4f} (<0.05), exact {exact}/10 (>=9), {elapsed:.0f}s on one thread (<300s)")


def test_criterion_8_saliency_signal(overfit_run):
    corpus, vocab, cfg, params, _, _, _ = overfit_run
    pos, neg = [], []
    for doc in corpus:
        qa = doc.qas[0]
        seq = build_input_sequence(qa.question, doc, vocab, cfg.L_max)
        enc = encode_batch(EncoderBatch.from_sequences([seq], cfg.D_app), params, cfg)
        P = saliency_scores(enc, seq, params)
        for key, label in pseudo_saliency_labels(seq, qa).items():
            (pos if label else neg).append(P[key])
    gap = float(np.mean(pos) - np.mean(neg))
    report(8, "saliency signal", gap >= 0.3,
           f"mean P label-1 {np.mean(pos):.3f} ({len(pos)}), label-0 {np.mean(neg):.3f} ({len(neg)}), "
           f"gap {gap:.3f} (>=0.3)")


# ------------------------------------------------------------------ 7


def test_criterion_7_metric_goldens():
    r = evaluate_pairs(PAIRS_5)
    # CIDEr goldens are on the x10 scale; the tolerance applies on the x100 reporting scale
    diffs = {name: abs(getattr(r, name) - want) * (100 if name == "cider" else 1)
             for name, want in GOLDEN_5.items()}
    identity = [(a, [a]) for a in ("the revenue of acme was 45.2 million", "yes", "the chart shows growth")]
    exact = (bleu_n(identity, 4), rouge_l(identity), exact_match(identity))
    name, worst = max(diffs.items(), key=lambda kv: kv[1])
    ok = worst < 0.1 and exact == (100.0, 100.0, 100.0)
    report(7, "metric goldens", ok,
           f"worst |diff| {worst:.4f} ({name}), limit 0.1; identity BLEU-4/ROUGE-L/EM = {exact}")


# ------------------------------------------------------------------ 9


def test_criterion_9_pipeline_determinism(tmp_path, capsys):
    dump_corpus(synthetic_corpus(4, seed=8, d_app=16), tmp_path / "train.jsonl")
    dump_corpus(synthetic_corpus(2, seed=9, d_app=16), tmp_path / "dev.jsonl")
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        common = ["--seed", "0", "--set", "H=32", "--set", "ffn_dim=64", "--set", "D_app=16",
                  "--set", "max_epochs=4", "--set", "batch_size=2", "--set", "max_answer_len=12"]
        codes = [
            cli_main(["train", "--train", str(tmp_path / "train.jsonl"), "--dev", str(tmp_path / "dev.jsonl"),
                      "--out", str(d), *common]),
            cli_main(["generate", "--checkpoint", str(d / "model.ckpt"), "--corpus", str(tmp_path / "dev.jsonl"),
                      "--output", str(d / "preds.txt"), *common]),
            cli_main(["eval", str(d / "preds.txt"), "--corpus", str(tmp_path / "dev.jsonl"),
                      "--report", str(d / "report.txt")]),
        ]
        assert codes == [0, 0, 0]
        outputs.append(tuple((d / n).read_bytes() for n in ("model.ckpt", "preds.txt", "report.txt")))
    capsys.readouterr()
    same = outputs[0] == outputs[1]
    report(9, "determinism", same, "checkpoint, predictions and report byte-identical across two seed-0 runs"
           if same else "outputs differ between runs")


# ------------------------------------------------------------------ 10


REAL_CORPUS = os.environ.get("LAYOUTMRC_REAL_CORPUS")


@pytest.mark.skipif(not REAL_CORPUS, reason="real corpus not available (optional, not gating)")
def test_criterion_10_real_corpus_stats():
    stats = compute_stats(load_corpus(REAL_CORPUS))
    ok = stats.num_questions == 30562 and math.isclose(stats.avg_len_answers, 9.53, abs_tol=0.5)
    report(10, "real corpus statistics", ok,
           f"num_questions {stats.num_questions} (30562), avg_len_answers {stats.avg_len_answers:.2f} (9.53 +/- 0.5)")
