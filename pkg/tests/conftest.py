import sys
import json

import numpy as np
import pytest

from layoutmrc.corpus import BBox, DocumentRecord, OcrToken, QaPair, Roi, RoiClass
from layoutmrc.model import ModelConfig, init_params
from layoutmrc.serializer import build_vocabulary
from layoutmrc.synthetic import synthetic_corpus
from layoutmrc.trainer import build_examples, make_batch


def make_doc(rois, qas=(), width=100, height=200):
    return DocumentRecord(width, height, tuple(rois), tuple(qas))


def paragraph(roi_id, words, y=10, x=10, cls=RoiClass.PARAGRAPH, appearance=None):
    toks = tuple(
        OcrToken(w, BBox(x + 12 * k, y, x + 12 * k + 10, y + 8)) for k, w in enumerate(words)
    )
    width = 12 * max(len(words), 1)
    return Roi(roi_id, BBox(x - 1, y - 1, x + width + 1, y + 10), cls, toks, appearance)


@pytest.fixture
def figure_doc():
    roi = paragraph(0, ["Figure", "1"])
    return make_doc([roi], [QaPair("who?", "figure one", frozenset({0}))])


@pytest.fixture
def record_line():
    return json.dumps({
        "width": 100, "height": 200,
        "rois": [{"id": 7, "class": "paragraph", "bbox": [10, 10, 60, 30],
                  "tokens": [{"form": "Figure", "bbox": [12, 12, 30, 28]},
                             {"form": "1.", "bbox": [32, 12, 40, 28]}],
                  "appearance": None}],
        "qas": [{"question": "What is shown?", "answer": "Figure 1", "relevant_rois": [7]}],
    })


MICRO = dict(H=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, ffn_dim=12, L_max=64,
             dropout=0.0, D_app=6, rel_max_distance=4)


@pytest.fixture
def micro_setup():
    """Two-example H=8 micro model with perturbed (non-degenerate) parameters."""

    def build(position_mode="absolute", seed=3):
        corpus = synthetic_corpus(2, seed=1, d_app=MICRO["D_app"])
        vocab = build_vocabulary(corpus)
        cfg = ModelConfig(position_mode=position_mode, **MICRO)
        params = init_params(cfg, len(vocab), seed=seed)
        rng = np.random.default_rng(seed + 100)
        for value in params.values():
            value += rng.normal(0.0, 0.3, size=value.shape)
        batch = make_batch(build_examples(corpus, vocab, cfg.L_max), cfg.D_app, vocab.pad_id)
        return corpus, vocab, cfg, params, batch

    return build


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
