"""Token-level document corpus: geometry, reading order, and corpus splits.

Corpus files are newline-delimited JSON (UTF-8). The first line is a header
declaring the class vocabulary; every later line is one document:

    {"classes": ["item", "count", "amount"]}
    {"doc_id": "r0001", "width": 1000, "height": 1400,
     "tokens": [{"text": "2x", "bbox": [412.0, 88.0, 430.0, 104.0], "label": "count"}]}

Class indices run 1..K in declaration order. Index 0 is reserved for the
"no opinion" value emitted by labeling rules and is never a gold label.
Token labels are optional and must be declared class names.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, Iterator

import numpy as np


class CorpusFormatError(ValueError):
    """A corpus stream violates the record format or a geometry invariant."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in page pixels, origin at the top-left corner."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 <= self.x1 and self.y0 <= self.y1):
            raise ValueError(
                f"bbox corners out of order: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(
                f"negative bbox coordinates: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)


@dataclass(frozen=True)
class NormBBox:
    """Box in page-relative coordinates; every corner lies in the unit square."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 <= self.x1 and self.y0 <= self.y1):
            raise ValueError(
                f"normalized bbox corners out of order: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )
        if self.x0 < 0 or self.y0 < 0 or self.x1 > 1 or self.y1 > 1:
            raise ValueError(
                f"normalized bbox outside unit square: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def contains(self, x: float, y: float) -> bool:
        """Inclusive point-in-box test."""
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class Token:
    """One OCR word: text, its page box, and an optional gold class index."""

    text: str
    bbox: BBox
    gold_label: int | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("token text must be non-empty")
        if "\n" in self.text:
            raise ValueError(f"token text contains a newline: {self.text!r}")
        if self.gold_label is not None and self.gold_label < 1:
            raise ValueError(f"gold label must be a class index >= 1, got {self.gold_label}")


@dataclass(frozen=True)
class Document:
    """A single page of tokens. Immutable after construction."""

    doc_id: str
    page_width: float
    page_height: float
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        if self.page_width <= 0 or self.page_height <= 0:
            raise ValueError(
                f"doc {self.doc_id!r}: page dimensions must be positive, "
                f"got {self.page_width} x {self.page_height}"
            )
        for i, tok in enumerate(self.tokens):
            b = tok.bbox
            if b.x1 > self.page_width or b.y1 > self.page_height:
                raise ValueError(
                    f"doc {self.doc_id!r} token {i}: bbox ({b.x0}, {b.y0}, {b.x1}, {b.y1}) "
                    f"exceeds page {self.page_width} x {self.page_height}"
                )

    @property
    def fully_labeled(self) -> bool:
        return all(t.gold_label is not None for t in self.tokens)


def normalize_bbox(bbox: BBox, page_width: float, page_height: float) -> NormBBox:
    """Divide each coordinate by the page dimension, mapping into the unit square."""
    if page_width <= 0 or page_height <= 0:
        raise ValueError(f"page dimensions must be positive, got {page_width} x {page_height}")
    return NormBBox(
        bbox.x0 / page_width,
        bbox.y0 / page_height,
        bbox.x1 / page_width,
        bbox.y1 / page_height,
    )


def reading_order(doc: Document) -> list[int]:
    """Token indices in reading order.

    Tokens are bucketed into lines of height equal to the median token height
    and sorted by (line bucket, x0). The sort is stable, so the result is
    deterministic for a fixed document.
    """
    n = len(doc.tokens)
    if n <= 1:
        return list(range(n))
    heights = [t.bbox.height for t in doc.tokens]
    line_h = float(np.median(heights))
    if line_h <= 0:
        keys = [(t.bbox.y0, t.bbox.x0) for t in doc.tokens]
    else:
        keys = [(math.floor(t.bbox.y0 / line_h + 0.5), t.bbox.x0) for t in doc.tokens]
    return sorted(range(n), key=lambda i: keys[i])


@dataclass(frozen=True)
class Corpus:
    """A class vocabulary plus an ordered collection of documents."""

    classes: tuple[str, ...]
    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names in vocabulary")
        seen: set[str] = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            for i, tok in enumerate(doc.tokens):
                if tok.gold_label is not None and tok.gold_label > len(self.classes):
                    raise ValueError(
                        f"doc {doc.doc_id!r} token {i}: gold label {tok.gold_label} "
                        f"exceeds {len(self.classes)} declared classes"
                    )

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @cached_property
    def instances(self) -> tuple[tuple[int, int], ...]:
        """Canonical instance list: (doc index, token index) pairs.

        Documents follow corpus order; tokens within a document follow reading
        order. Label matrices, feature tables, and split row indices all share
        this ordering.
        """
        pairs: list[tuple[int, int]] = []
        for d, doc in enumerate(self.documents):
            pairs.extend((d, t) for t in reading_order(doc))
        return tuple(pairs)

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    def token(self, instance: tuple[int, int]) -> Token:
        d, t = instance
        return self.documents[d].tokens[t]

    def gold_labels(self) -> np.ndarray:
        """Gold class per instance in canonical order; 0 where absent."""
        out = np.zeros(len(self.instances), dtype=np.int64)
        for r, (d, t) in enumerate(self.instances):
            gold = self.documents[d].tokens[t].gold_label
            out[r] = 0 if gold is None else gold
        return out

    def class_index(self, name: str) -> int:
        """1-based index of a class name."""
        try:
            return self.classes.index(name) + 1
        except ValueError:
            raise KeyError(f"unknown class name {name!r}") from None


def _read_text(source: str | Path | IO[str] | IO[bytes]) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _iter_records(text: str) -> Iterator[tuple[int, dict]]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise CorpusFormatError(f"line {line_no}: invalid JSON ({err.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusFormatError(f"line {line_no}: record must be an object")
        yield line_no, obj


def _parse_token(obj: dict, class_to_idx: dict[str, int] | None, where: str) -> Token:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"{where}: token must be an object")
    text = obj.get("text")
    if not isinstance(text, str):
        raise CorpusFormatError(f"{where}: missing or non-string field 'text'")
    raw_bbox = obj.get("bbox")
    if not isinstance(raw_bbox, list) or len(raw_bbox) != 4:
        raise CorpusFormatError(f"{where}: field 'bbox' must be an array of 4 numbers")
    try:
        coords = [float(v) for v in raw_bbox]
    except (TypeError, ValueError):
        raise CorpusFormatError(f"{where}: field 'bbox' must be an array of 4 numbers") from None
    gold: int | None = None
    label = obj.get("label")
    if label is not None:
        if not isinstance(label, str):
            raise CorpusFormatError(f"{where}: field 'label' must be a class name string")
        if class_to_idx is None:
            raise CorpusFormatError(f"{where}: token labeled {label!r} but no class header was declared")
        if label not in class_to_idx:
            raise CorpusFormatError(f"{where}: label {label!r} is not a declared class")
        gold = class_to_idx[label]
    try:
        return Token(text=text, bbox=BBox(*coords), gold_label=gold)
    except ValueError as err:
        raise CorpusFormatError(f"{where}: {err}") from None


def _parse_document(obj: dict, class_to_idx: dict[str, int] | None, line_no: int) -> Document:
    doc_id = obj.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusFormatError(f"line {line_no}: missing or empty field 'doc_id'")
    for dim in ("width", "height"):
        if not isinstance(obj.get(dim), (int, float)):
            raise CorpusFormatError(f"line {line_no}: doc {doc_id!r}: missing numeric field {dim!r}")
    raw_tokens = obj.get("tokens")
    if not isinstance(raw_tokens, list):
        raise CorpusFormatError(f"line {line_no}: doc {doc_id!r}: field 'tokens' must be an array")
    tokens = tuple(
        _parse_token(t, class_to_idx, f"line {line_no}: doc {doc_id!r} token {i}")
        for i, t in enumerate(raw_tokens)
    )
    try:
        return Document(
            doc_id=doc_id,
            page_width=float(obj["width"]),
            page_height=float(obj["height"]),
            tokens=tokens,
        )
    except ValueError as err:
        raise CorpusFormatError(f"line {line_no}: {err}") from None


def read_corpus(source: str | Path | IO[str] | IO[bytes]) -> Corpus:
    """Parse a corpus stream (header line plus one document per line).

    An entirely empty stream yields an empty corpus with no classes. A stream
    with records but no class header is rejected.
    """
    records = list(_iter_records(_read_text(source)))
    if not records:
        return Corpus(classes=(), documents=())
    line_no, header = records[0]
    if "classes" not in header:
        raise CorpusFormatError(f"line {line_no}: first record must be a header with field 'classes'")
    classes = header["classes"]
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise CorpusFormatError(f"line {line_no}: field 'classes' must be an array of names")
    class_to_idx = {name: i + 1 for i, name in enumerate(classes)}
    if len(class_to_idx) != len(classes):
        raise CorpusFormatError(f"line {line_no}: duplicate class names in header")
    docs = [_parse_document(obj, class_to_idx, ln) for ln, obj in records[1:]]
    try:
        return Corpus(classes=tuple(classes), documents=tuple(docs))
    except ValueError as err:
        raise CorpusFormatError(str(err)) from None


def parse_documents(source: str | Path | IO[str] | IO[bytes]) -> list[Document]:
    """Parse document records only, preserving file order.

    A leading class header is consumed and used to validate token labels when
    present; an empty stream yields an empty list.
    """
    records = list(_iter_records(_read_text(source)))
    class_to_idx: dict[str, int] | None = None
    if records and "classes" in records[0][1]:
        header = records[0][1]
        class_to_idx = {name: i + 1 for i, name in enumerate(header["classes"])}
        records = records[1:]
    return [_parse_document(obj, class_to_idx, ln) for ln, obj in records]


def corpus_to_jsonl(corpus: Corpus) -> str:
    """Serialize a corpus back to the newline-delimited record format."""
    lines = [json.dumps({"classes": list(corpus.classes)})]
    for doc in corpus.documents:
        tokens = []
        for tok in doc.tokens:
            rec: dict = {
                "text": tok.text,
                "bbox": [tok.bbox.x0, tok.bbox.y0, tok.bbox.x1, tok.bbox.y1],
            }
            if tok.gold_label is not None:
                rec["label"] = corpus.classes[tok.gold_label - 1]
            tokens.append(rec)
        lines.append(
            json.dumps(
                {
                    "doc_id": doc.doc_id,
                    "width": doc.page_width,
                    "height": doc.page_height,
                    "tokens": tokens,
                }
            )
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CorpusSplit:
    """Document-level partition into labeled / unlabeled / validation / test.

    Splits are assigned per document, not per token: the labeled percentage
    counts documents, and token counts then vary with document length.
    """

    labeled: tuple[str, ...]
    unlabeled: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    fractions: tuple[float, float, float]

    def rows(self, corpus: Corpus) -> dict[str, np.ndarray]:
        """Instance (row) indices per part, in canonical corpus order."""
        part_of = {}
        for part in ("labeled", "unlabeled", "validation", "test"):
            for doc_id in getattr(self, part):
                part_of[doc_id] = part
        rows: dict[str, list[int]] = {p: [] for p in ("labeled", "unlabeled", "validation", "test")}
        for r, (d, _t) in enumerate(corpus.instances):
            doc_id = corpus.documents[d].doc_id
            if doc_id not in part_of:
                raise ValueError(f"doc {doc_id!r} is missing from the split")
            rows[part_of[doc_id]].append(r)
        return {p: np.asarray(ix, dtype=np.int64) for p, ix in rows.items()}

    def to_obj(self) -> dict:
        return {
            "labeled": list(self.labeled),
            "unlabeled": list(self.unlabeled),
            "validation": list(self.validation),
            "test": list(self.test),
            "seed": self.seed,
            "fractions": list(self.fractions),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "CorpusSplit":
        return cls(
            labeled=tuple(obj["labeled"]),
            unlabeled=tuple(obj["unlabeled"]),
            validation=tuple(obj["validation"]),
            test=tuple(obj["test"]),
            seed=int(obj["seed"]),
            fractions=tuple(float(f) for f in obj["fractions"]),
        )


def split_corpus(
    corpus: Corpus,
    labeled_fraction: float,
    val_fraction: float,
    test_fraction: float,
    seed: int,
) -> CorpusSplit:
    """Randomly assign whole documents to the four split parts.

    Only fully gold-labeled documents are eligible for the labeled,
    validation, and test parts; everything else becomes unlabeled. The
    assignment is deterministic for a fixed seed.
    """
    fractions = (labeled_fraction, val_fraction, test_fraction)
    for name, frac in zip(("labeled", "val", "test"), fractions):
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"{name} fraction must be in [0, 1], got {frac}")
    if sum(fractions) > 1.0 + 1e-12:
        raise ValueError(f"fractions sum to {sum(fractions)}, which exceeds 1")

    n_docs = len(corpus.documents)
    counts = [int(round(frac * n_docs)) for frac in fractions]
    eligible = [d for d in range(n_docs) if corpus.documents[d].fully_labeled]
    if sum(counts) > len(eligible):
        raise ValueError(
            f"need {sum(counts)} gold-labeled documents for the requested fractions "
            f"but only {len(eligible)} of {n_docs} are fully labeled"
        )

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(eligible))
    chosen = [eligible[i] for i in perm]
    n_lab, n_val, n_test = counts
    lab = set(chosen[:n_lab])
    val = set(chosen[n_lab : n_lab + n_val])
    test = set(chosen[n_lab + n_val : n_lab + n_val + n_test])

    ids = [doc.doc_id for doc in corpus.documents]
    return CorpusSplit(
        labeled=tuple(ids[d] for d in range(n_docs) if d in lab),
        unlabeled=tuple(ids[d] for d in range(n_docs) if d not in lab | val | test),
        validation=tuple(ids[d] for d in range(n_docs) if d in val),
        test=tuple(ids[d] for d in range(n_docs) if d in test),
        seed=seed,
        fractions=fractions,
    )
