"""Seeded synthetic document corpora for smoke tests and overfit runs.

Each page has a heading, a paragraph stating a few facts, a data region with
no OCR words, a caption, and a list. Answers restate one fact, so their words
overlap the OCR of the relevant paragraph.
"""

from __future__ import annotations

import numpy as np

from .corpus import BBox, DocumentRecord, OcrToken, QaPair, Roi, RoiClass

_ENTITIES = ["acme", "globex", "initech", "umbrella", "hooli", "vandelay", "stark", "wayne",
             "tyrell", "cyberdyne", "wonka", "soylent", "aperture", "gringotts", "oscorp", "dunder"]
_METRICS = ["revenue", "profit", "headcount", "growth", "budget", "output", "rainfall", "turnout"]
_UNITS = ["million", "percent", "tons", "people", "dollars", "units"]
_TOPICS = ["annual", "report", "survey", "summary", "review", "bulletin", "digest", "overview"]
_FILLER = ["the", "table", "shows", "figures", "for", "each", "region", "over", "time", "and",
           "notes", "below", "explain", "method"]


def _layout_line(words, x0, y0, word_w=60, word_h=20, gap=8):
    tokens = []
    x = x0
    for w in words:
        tokens.append(OcrToken(w, BBox(x, y0, x + word_w, y0 + word_h)))
        x += word_w + gap
    return tokens


def _enclosing(tokens, pad=4):
    return BBox(
        max(0.0, min(t.bbox.x_min for t in tokens) - pad),
        max(0.0, min(t.bbox.y_min for t in tokens) - pad),
        max(t.bbox.x_max for t in tokens) + pad,
        max(t.bbox.y_max for t in tokens) + pad,
    )


def synthetic_document(rng: np.random.Generator, index: int, d_app: int | None = 64,
                       qas_per_doc: int = 1) -> DocumentRecord:
    width, height = 1000, 1200
    entity = _ENTITIES[index % len(_ENTITIES)]
    topic = _TOPICS[int(rng.integers(len(_TOPICS)))]

    def app():
        return tuple(rng.normal(size=d_app).round(4).tolist()) if d_app else None

    rois = []
    head = _layout_line([entity, topic, "report"], 40, 40)
    rois.append(Roi(0, _enclosing(head), RoiClass.HEADING, tuple(head), app()))

    metrics = rng.choice(len(_METRICS), size=3, replace=False)
    facts = []
    lines = []
    y = 120
    for m in metrics:
        value = f"{int(rng.integers(2, 99))}.{int(rng.integers(0, 9))}"
        unit = _UNITS[int(rng.integers(len(_UNITS)))]
        words = ["the", _METRICS[m], "was", value, unit + "."]
        lines += _layout_line(words, 40, y)
        facts.append((_METRICS[m], value, unit))
        y += 30
    rois.append(Roi(1, _enclosing(lines), RoiClass.PARAGRAPH, tuple(lines), app()))

    rois.append(Roi(2, BBox(40, y + 20, 500, y + 220), RoiClass.DATA, (), app()))
    cap_words = ["figure", str(index + 1) + ":", entity, _METRICS[metrics[0]]]
    cap = _layout_line(cap_words, 40, y + 240)
    rois.append(Roi(3, _enclosing(cap), RoiClass.CAPTION, tuple(cap), app()))
    filler = list(rng.choice(_FILLER, size=5))
    lst = _layout_line(filler, 560, y + 20)
    rois.append(Roi(4, _enclosing(lst), RoiClass.LIST, tuple(lst), app()))

    qas = []
    for k in range(min(qas_per_doc, len(facts))):
        metric, value, unit = facts[k]
        qas.append(QaPair(
            question=f"What was the {metric} of {entity}?",
            answer=f"The {metric} of {entity} was {value} {unit}.",
            relevant_roi_ids=frozenset({1}),
        ))
    return DocumentRecord(width, height, tuple(rois), tuple(qas))


def synthetic_corpus(n_docs: int = 10, seed: int = 0, d_app: int | None = 64,
                     qas_per_doc: int = 1) -> list[DocumentRecord]:
    rng = np.random.default_rng(seed)
    return [synthetic_document(rng, i, d_app, qas_per_doc) for i in range(n_docs)]


def main(argv: list[str] | None = None) -> int:
    import argparse

    from .corpus import dump_corpus

    parser = argparse.ArgumentParser(prog="python -m layoutmrc.synthetic",
                                     description="write a synthetic corpus file")
    parser.add_argument("output")
    parser.add_argument("--docs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--qas-per-doc", type=int, default=1)
    parser.add_argument("--d-app", type=int, default=64)
    args = parser.parse_args(argv)
    dump_corpus(synthetic_corpus(args.docs, args.seed, args.d_app, args.qas_per_doc), args.output)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
