"""Document/QA record format, validation, and corpus statistics.

One document per line, each line a JSON object::

    {"width": 800, "height": 1000,
     "rois": [{"id": 0, "class": "paragraph", "bbox": [x0, y0, x1, y1],
               "tokens": [{"form": "Figure", "bbox": [...]}, ...],
               "appearance": [0.1, ...] | null}],
     "qas": [{"question": "...", "answer": "...", "relevant_rois": [0]}]}
"""

from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Iterable, Sequence


class CorpusError(ValueError):
    """Raised when a record cannot be parsed or violates an invariant."""


class CorpusWarning(UserWarning):
    """Non-fatal annotation problems, e.g. OCR boxes overhanging their ROI."""


class RoiClass(enum.Enum):
    HEADING = "heading"
    SUBTITLE = "subtitle"
    PARAGRAPH = "paragraph"
    PICTURE = "picture"
    CAPTION = "caption"
    LIST = "list"
    DATA = "data"
    SUBDATA = "subdata"
    OTHER = "other"

    @property
    def index(self) -> int:
        return _CLASS_INDEX[self]


_CLASS_INDEX = {c: i for i, c in enumerate(RoiClass)}
NUM_ROI_CLASSES = len(RoiClass)


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if min(self.x_min, self.y_min, self.x_max, self.y_max) < 0:
            raise CorpusError(f"bbox {self.as_list()} has a negative coordinate")
        if not self.x_min < self.x_max:
            raise CorpusError(f"bbox {self.as_list()}: x_min must be < x_max")
        if not self.y_min < self.y_max:
            raise CorpusError(f"bbox {self.as_list()}: y_min must be < y_max")

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def contains(self, other: "BBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and other.x_max <= self.x_max
            and other.y_max <= self.y_max
        )


@dataclass(frozen=True)
class OcrToken:
    form: str
    bbox: BBox


@dataclass(frozen=True)
class Roi:
    id: int
    bbox: BBox
    roi_class: RoiClass
    tokens: tuple[OcrToken, ...] = ()
    appearance: tuple[float, ...] | None = None


@dataclass(frozen=True)
class QaPair:
    question: str
    answer: str
    relevant_roi_ids: frozenset[int] = frozenset()


@dataclass(frozen=True)
class DocumentRecord:
    image_width: float
    image_height: float
    rois: tuple[Roi, ...] = ()
    qas: tuple[QaPair, ...] = ()

    def roi_by_id(self, roi_id: int) -> Roi:
        for roi in self.rois:
            if roi.id == roi_id:
                return roi
        raise KeyError(roi_id)


@dataclass
class CorpusStats:
    num_images: int = 0
    num_questions: int = 0
    num_unique_questions: int = 0
    pct_unique_answers: float = 0.0
    avg_len_questions: float = 0.0
    avg_len_documents: float = 0.0
    avg_len_answers: float = 0.0

    def format(self) -> str:
        rows = [
            ("Num. images", f"{self.num_images:,}"),
            ("Num. questions", f"{self.num_questions:,}"),
            ("Num. unique questions", f"{self.num_unique_questions:,}"),
            ("Perc. unique answers", f"{self.pct_unique_answers:.2f}"),
            ("Avg. len. questions", f"{self.avg_len_questions:.2f}"),
            ("Avg. len. documents", f"{self.avg_len_documents:.2f}"),
            ("Avg. len. answers", f"{self.avg_len_answers:.2f}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


# ---------------------------------------------------------------- parsing


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise CorpusError(f"{where}: missing field '{key}'")
    return obj[key]


def _parse_bbox(raw: Any, where: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise CorpusError(f"{where}: bbox must be a list of 4 numbers")
    try:
        coords = [float(v) for v in raw]
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"{where}: bbox must be a list of 4 numbers") from exc
    try:
        return BBox(*coords)
    except CorpusError as exc:
        raise CorpusError(f"{where}: {exc}") from None


def _parse_roi(raw: dict, where: str) -> Roi:
    if not isinstance(raw, dict):
        raise CorpusError(f"{where}: ROI must be an object")
    roi_id = _require(raw, "id", where)
    if not isinstance(roi_id, int) or isinstance(roi_id, bool):
        raise CorpusError(f"{where}.id: must be an integer")
    cls_name = _require(raw, "class", where)
    try:
        roi_class = RoiClass(cls_name)
    except ValueError:
        raise CorpusError(
            f"{where}.class: unknown ROI class {cls_name!r}; "
            f"expected one of {[c.value for c in RoiClass]}"
        ) from None
    bbox = _parse_bbox(_require(raw, "bbox", where), f"{where}.bbox")
    tokens = []
    for j, tok in enumerate(raw.get("tokens") or []):
        twhere = f"{where}.tokens[{j}]"
        if not isinstance(tok, dict):
            raise CorpusError(f"{twhere}: token must be an object")
        form = _require(tok, "form", twhere)
        if not isinstance(form, str) or not form.strip():
            raise CorpusError(f"{twhere}.form: must be a non-empty string")
        tbox = _parse_bbox(_require(tok, "bbox", twhere), f"{twhere}.bbox")
        if not bbox.contains(tbox):
            warnings.warn(f"{twhere}: token bbox overhangs its ROI", CorpusWarning, stacklevel=4)
        tokens.append(OcrToken(form, tbox))
    appearance = raw.get("appearance")
    if appearance is not None:
        try:
            appearance = tuple(float(v) for v in appearance)
        except (TypeError, ValueError):
            raise CorpusError(f"{where}.appearance: must be a list of numbers or null") from None
    return Roi(roi_id, bbox, roi_class, tuple(tokens), appearance)


def parse_record(obj: Any, where: str = "record") -> DocumentRecord:
    """Build a validated :class:`DocumentRecord` from a decoded JSON object."""
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: record must be a JSON object")
    width = _require(obj, "width", where)
    height = _require(obj, "height", where)
    for name, value in (("width", width), ("height", height)):
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
            raise CorpusError(f"{where}.{name}: must be a positive number")
    rois = tuple(_parse_roi(r, f"{where}.rois[{i}]") for i, r in enumerate(obj.get("rois") or []))
    seen: set[int] = set()
    for i, roi in enumerate(rois):
        if roi.id in seen:
            raise CorpusError(f"{where}.rois[{i}].id: duplicate ROI id {roi.id}")
        seen.add(roi.id)
        if roi.bbox.x_max > width or roi.bbox.y_max > height:
            raise CorpusError(f"{where}.rois[{i}].bbox: {roi.bbox.as_list()} lies outside the image")
    qas = []
    for k, qa in enumerate(obj.get("qas") or []):
        qwhere = f"{where}.qas[{k}]"
        if not isinstance(qa, dict):
            raise CorpusError(f"{qwhere}: QA must be an object")
        question = _require(qa, "question", qwhere)
        answer = _require(qa, "answer", qwhere)
        for name, text in (("question", question), ("answer", answer)):
            if not isinstance(text, str) or not text.strip():
                raise CorpusError(f"{qwhere}.{name}: must be a non-empty string")
        relevant = frozenset(qa.get("relevant_rois") or [])
        unknown = sorted(relevant - seen)
        if unknown:
            raise CorpusError(f"{qwhere}.relevant_rois: unknown ROI ids {unknown}")
        qas.append(QaPair(question, answer, relevant))
    return DocumentRecord(float(width), float(height), rois, tuple(qas))


def load_corpus(path: str | PathLike) -> list[DocumentRecord]:
    """Read a line-delimited corpus file. Blank lines are skipped."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: parse error: {exc.msg}") from None
            try:
                docs.append(parse_record(obj))
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
    return docs


def _num(v: float) -> int | float:
    return int(v) if float(v).is_integer() else v


def record_to_dict(doc: DocumentRecord) -> dict:
    return {
        "width": _num(doc.image_width),
        "height": _num(doc.image_height),
        "rois": [
            {
                "id": roi.id,
                "class": roi.roi_class.value,
                "bbox": [_num(v) for v in roi.bbox.as_list()],
                "tokens": [
                    {"form": t.form, "bbox": [_num(v) for v in t.bbox.as_list()]} for t in roi.tokens
                ],
                "appearance": list(roi.appearance) if roi.appearance is not None else None,
            }
            for roi in doc.rois
        ],
        "qas": [
            {"question": qa.question, "answer": qa.answer, "relevant_rois": sorted(qa.relevant_roi_ids)}
            for qa in doc.qas
        ],
    }


def dump_corpus(docs: Iterable[DocumentRecord], path: str | PathLike) -> None:
    Path(path).write_text(
        "".join(json.dumps(record_to_dict(d), ensure_ascii=False) + "\n" for d in docs),
        encoding="utf-8",
    )


def iter_qas(docs: Sequence[DocumentRecord]):
    """Yield ``(doc, qa)`` in corpus order."""
    for doc in docs:
        for qa in doc.qas:
            yield doc, qa


# ------------------------------------------------------------- statistics

_WS = re.compile(r"\s+")


def _norm_text(text: str) -> str:
    return _WS.sub(" ", text.lower()).strip()


def compute_stats(corpus: Sequence[DocumentRecord]) -> CorpusStats:
    """Corpus-level counts. Lengths use whitespace tokens; documents count OCR words."""
    questions = [qa.question for doc in corpus for qa in doc.qas]
    answers = [qa.answer for doc in corpus for qa in doc.qas]
    n_q = len(questions)
    stats = CorpusStats(num_images=len(corpus), num_questions=n_q)
    if corpus:
        stats.avg_len_documents = sum(
            len(roi.tokens) for doc in corpus for roi in doc.rois
        ) / len(corpus)
    if n_q:
        stats.num_unique_questions = len({_norm_text(q) for q in questions})
        stats.pct_unique_answers = 100.0 * len({_norm_text(a) for a in answers}) / n_q
        stats.avg_len_questions = sum(len(q.split()) for q in questions) / n_q
        stats.avg_len_answers = sum(len(a.split()) for a in answers) / n_q
    return stats


__all__ = [
    "BBox",
    "CorpusError",
    "CorpusStats",
    "CorpusWarning",
    "DocumentRecord",
    "NUM_ROI_CLASSES",
    "OcrToken",
    "QaPair",
    "Roi",
    "RoiClass",
    "compute_stats",
    "dump_corpus",
    "iter_qas",
    "load_corpus",
    "parse_record",
    "record_to_dict",
]
