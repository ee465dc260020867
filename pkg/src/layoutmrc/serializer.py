"""Tokenization and encoder input-sequence assembly.

The encoder sees ``[S] q_1 .. q_m [SEP]`` followed, for each ROI in reading
order, by a class-label token ``[L_<class>]`` and the ROI's OCR pieces.
Layout metadata (segment class, normalized box, appearance vector) rides along
on every ROI-label and OCR position and is absent elsewhere.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import BBox, DocumentRecord, OcrToken, Roi, RoiClass

PAD, UNK, S, SEP, BOS, EOS = "[PAD]", "[UNK]", "[S]", "[SEP]", "[BOS]", "[EOS]"
LABEL_TOKENS = {c: f"[L_{c.value}]" for c in RoiClass}
RESERVED = (PAD, UNK, S, SEP, BOS, EOS, *LABEL_TOKENS.values())

DEFAULT_L_MAX = 512

# decimals stay whole ("77.3"); every other punctuation mark is its own piece
_PIECE_RE = re.compile(r"\d+(?:[.,]\d+)+|\w+|[^\w\s]")


class SequenceError(ValueError):
    pass


def split_pieces(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _PIECE_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map with fixed reserved ids at the front."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.itos: list[str] = list(tokens)
        self.stoi: dict[str, int] = {}
        for i, tok in enumerate(self.itos):
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self.stoi[tok] = i

    pad_id = RESERVED.index(PAD)
    unk_id = RESERVED.index(UNK)
    s_id = RESERVED.index(S)
    sep_id = RESERVED.index(SEP)
    bos_id = RESERVED.index(BOS)
    eos_id = RESERVED.index(EOS)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def label_id(self, roi_class: RoiClass) -> int:
        return self.stoi[LABEL_TOKENS[roi_class]]

    def is_special(self, token_id: int) -> bool:
        return token_id < len(RESERVED)

    def save(self, path: str | PathLike) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | PathLike) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def _corpus_texts(corpus: Iterable[DocumentRecord]):
    for doc in corpus:
        for qa in doc.qas:
            yield qa.question
            yield qa.answer
        for roi in doc.rois:
            for tok in roi.tokens:
                yield tok.form


def build_vocabulary(corpus: Iterable[DocumentRecord], max_size: int = 8000) -> Vocabulary:
    """Keep the most frequent pieces; ties broken lexicographically."""
    if max_size <= len(RESERVED):
        raise ValueError(f"max_size must exceed the {len(RESERVED)} reserved tokens")
    counts: Counter[str] = Counter()
    for text in _corpus_texts(corpus):
        counts.update(split_pieces(text))
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocabulary([*RESERVED, *keep])


def tokenize(text: str, vocab: Vocabulary) -> list[tuple[int, str]]:
    """Split ``text`` into ``(id, piece)`` pairs; OOV pieces map to [UNK]."""
    return [(vocab.id(p), p) for p in split_pieces(text)]


def detokenize(token_ids: Iterable[int], vocab: Vocabulary) -> str:
    """Join non-special pieces with single spaces ([UNK] is kept visible)."""
    out = []
    for t in token_ids:
        if t == vocab.unk_id or not vocab.is_special(t):
            out.append(vocab.itos[t])
    return " ".join(out)


def normalize_answer(text: str) -> str:
    """The string a perfect generator would emit for ``text``."""
    return " ".join(split_pieces(text))


def order_rois(rois: Sequence[Roi]) -> list[Roi]:
    """Reading order: top-to-bottom, then left-to-right; stable on ties."""
    return sorted(rois, key=lambda r: (r.bbox.y_min, r.bbox.x_min))


def normalize_bbox(b: BBox, width: float, height: float) -> tuple[float, float, float, float]:
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    return (b.x_min / width, b.y_min / height, b.x_max / width, b.y_max / height)


# Appearance providers map (document, ROI, OCR token or None for the label
# position) to a feature vector, or None when no feature is available.
AppearanceProvider = Callable[[DocumentRecord, Roi, "OcrToken | None"], "Sequence[float] | None"]


def roi_appearance(doc: DocumentRecord, roi: Roi, token: OcrToken | None) -> Sequence[float] | None:
    """Default provider: every position in a ROI shares the ROI-level vector."""
    return roi.appearance


@dataclass(frozen=True)
class InputPosition:
    token_id: int
    piece: str
    origin: str  # "special" | "question" | "roi_label" | "ocr"
    seg_class: RoiClass | None = None
    loc: tuple[float, float, float, float] | None = None
    appearance_ref: tuple[float, ...] | None = None
    has_appearance: bool = False
    roi_index: int | None = None
    token_index: int | None = None
    roi_id: int | None = None


@dataclass
class InputSequence:
    positions: list[InputPosition] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self):
        return iter(self.positions)

    @property
    def token_ids(self) -> list[int]:
        return [p.token_id for p in self.positions]

    def ocr_positions(self) -> list[int]:
        return [k for k, p in enumerate(self.positions) if p.origin == "ocr"]


def build_input_sequence(
    question: str,
    doc: DocumentRecord,
    vocab: Vocabulary,
    L_max: int = DEFAULT_L_MAX,
    appearance: AppearanceProvider = roi_appearance,
) -> InputSequence:
    """Assemble the encoder input for one (question, document) pair.

    Sub-word pieces of one OCR word all carry the word's box. Positions beyond
    ``L_max`` are dropped; a ROI label may end up with no OCR pieces after it.
    """
    positions = [InputPosition(vocab.s_id, S, "special")]
    positions += [InputPosition(tid, piece, "question") for tid, piece in tokenize(question, vocab)]
    positions.append(InputPosition(vocab.sep_id, SEP, "special"))
    if len(positions) > L_max:
        raise SequenceError(
            f"question needs {len(positions)} positions including [S]/[SEP], L_max is {L_max}"
        )

    W, H = doc.image_width, doc.image_height
    for i, roi in enumerate(order_rois(doc.rois)):
        if len(positions) >= L_max:
            break
        feat = appearance(doc, roi, None)
        positions.append(
            InputPosition(
                vocab.label_id(roi.roi_class),
                LABEL_TOKENS[roi.roi_class],
                "roi_label",
                seg_class=roi.roi_class,
                loc=normalize_bbox(roi.bbox, W, H),
                appearance_ref=tuple(feat) if feat is not None else None,
                has_appearance=True,
                roi_index=i,
                roi_id=roi.id,
            )
        )
        j = 0
        for tok in roi.tokens:
            loc = normalize_bbox(tok.bbox, W, H)
            feat = appearance(doc, roi, tok)
            feat = tuple(feat) if feat is not None else None
            for tid, piece in tokenize(tok.form, vocab):
                if len(positions) >= L_max:
                    break
                positions.append(
                    InputPosition(
                        tid,
                        piece,
                        "ocr",
                        seg_class=roi.roi_class,
                        loc=loc,
                        appearance_ref=feat,
                        has_appearance=True,
                        roi_index=i,
                        token_index=j,
                        roi_id=roi.id,
                    )
                )
                j += 1
    return InputSequence(positions)


def format_sequence(seq: InputSequence, labels: dict[tuple[int, int], int] | None = None) -> str:
    """Readable one-line-per-position dump used by ``layoutmrc inspect``."""
    lines = [f"{'k':>4}  {'piece':<16} {'id':>5}  {'origin':<9} {'segment':<9} {'loc':<27} label"]
    for k, p in enumerate(seq.positions):
        seg = p.seg_class.value if p.seg_class else "-"
        loc = "[" + ",".join(f"{v:.3f}" for v in p.loc) + "]" if p.loc else "-"
        lab = "-"
        if labels is not None and p.origin == "ocr":
            lab = str(labels.get((p.roi_index, p.token_index), 0))
        lines.append(f"{k:>4}  {p.piece:<16} {p.token_id:>5}  {p.origin:<9} {seg:<9} {loc:<27} {lab}")
    return "\n".join(lines)
