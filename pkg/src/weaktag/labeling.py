"""Rule evaluation over tokens in spatial context, label matrices, diagnostics."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .documents import Corpus, Document, Token, normalize_bbox, reading_order
from .utils import atomic_write_text
from .rules import (
    AllOf,
    AnyOf,
    KeywordRule,
    LabelingFunction,
    NeighborRule,
    Not,
    RegexRule,
    RegionRule,
    Rule,
    normalize_token_text,
)

ABSTAIN = 0

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ContextParams:
    """How far a rule may look around its subject token.

    window counts reading-order neighbors on each side; radius caps the
    normalized center distance for spatial neighbors.
    """

    window: int = 2
    radius: float = 0.08

    def __post_init__(self) -> None:
        if self.window < 0:
            raise ValueError(f"window must be >= 0, got {self.window}")
        if not 0.0 <= self.radius <= _SQRT2:
            raise ValueError(f"radius must be in [0, sqrt(2)], got {self.radius}")


@dataclass(frozen=True)
class ContextToken:
    """A neighbor of the subject, annotated with relative geometry."""

    index: int
    token: Token
    direction: str
    dx: float
    dy: float
    distance: float


def _direction(dx: float, dy: float) -> str:
    # Dominant displacement axis wins; exact ties go horizontal.
    if abs(dx) >= abs(dy):
        return "left" if dx < 0 else "right"
    return "above" if dy < 0 else "below"


class TokenContext:
    """Context set for one subject token.

    Holds the deduplicated reading-order and radius neighbors, and can derive
    the context of any other token in the same document (needed when neighbor
    rules nest).
    """

    __slots__ = ("doc", "index", "neighbors", "_doc_ctx")

    def __init__(
        self,
        doc: Document,
        index: int,
        neighbors: tuple[ContextToken, ...],
        doc_ctx: "DocContext",
    ) -> None:
        self.doc = doc
        self.index = index
        self.neighbors = neighbors
        self._doc_ctx = doc_ctx

    @property
    def token(self) -> Token:
        return self.doc.tokens[self.index]

    def nearest(self, direction: str) -> ContextToken | None:
        best: ContextToken | None = None
        for n in self.neighbors:
            if n.direction != direction:
                continue
            if best is None or (n.distance, n.index) < (best.distance, best.index):
                best = n
        return best

    def context_of(self, index: int) -> "TokenContext":
        return self._doc_ctx.context_of(index)


class DocContext:
    """Per-document cache of reading order, normalized centers, and contexts."""

    def __init__(self, doc: Document, params: ContextParams) -> None:
        self.doc = doc
        self.params = params
        self.order = reading_order(doc)
        self.rank = {tok_idx: pos for pos, tok_idx in enumerate(self.order)}
        self.centers = [
            normalize_bbox(t.bbox, doc.page_width, doc.page_height).center for t in doc.tokens
        ]
        self._cache: dict[int, TokenContext] = {}

    def context_of(self, index: int) -> TokenContext:
        if index < 0 or index >= len(self.doc.tokens):
            raise IndexError(f"token index {index} out of range for doc {self.doc.doc_id!r}")
        ctx = self._cache.get(index)
        if ctx is None:
            ctx = TokenContext(self.doc, index, self._neighbors(index), self)
            self._cache[index] = ctx
        return ctx

    def _neighbors(self, index: int) -> tuple[ContextToken, ...]:
        picked: set[int] = set()
        pos = self.rank[index]
        for step in range(1, self.params.window + 1):
            for p in (pos - step, pos + step):
                if 0 <= p < len(self.order):
                    picked.add(self.order[p])
        if self.params.radius > 0:
            cx, cy = self.centers[index]
            for j, (nx, ny) in enumerate(self.centers):
                if j == index:
                    continue
                if math.hypot(nx - cx, ny - cy) <= self.params.radius:
                    picked.add(j)
        picked.discard(index)

        cx, cy = self.centers[index]
        out = []
        for j in sorted(picked):
            nx, ny = self.centers[j]
            dx, dy = nx - cx, ny - cy
            out.append(
                ContextToken(
                    index=j,
                    token=self.doc.tokens[j],
                    direction=_direction(dx, dy),
                    dx=dx,
                    dy=dy,
                    distance=math.hypot(dx, dy),
                )
            )
        out.sort(key=lambda c: (c.distance, c.index))
        return tuple(out)


def context_of(doc: Document, token_idx: int, params: ContextParams) -> TokenContext:
    """Build the context set of one token. For bulk use, keep a DocContext."""
    return DocContext(doc, params).context_of(token_idx)


@lru_cache(maxsize=512)
def _compiled(pattern: str) -> re.Pattern:
    return re.compile(pattern)


def evaluate_rule(rule: Rule, ctx: TokenContext) -> bool:
    """Pure, deterministic truth value of a rule for the context's subject."""
    if isinstance(rule, RegexRule):
        return _compiled(rule.pattern).search(ctx.token.text) is not None
    if isinstance(rule, KeywordRule):
        norm = normalize_token_text(ctx.token.text)
        if rule.match_mode == "exact":
            return norm in rule.lexicon
        return any(norm.startswith(w) for w in rule.lexicon)
    if isinstance(rule, RegionRule):
        cx, cy = normalize_bbox(ctx.token.bbox, ctx.doc.page_width, ctx.doc.page_height).center
        return rule.region.contains(cx, cy)
    if isinstance(rule, NeighborRule):
        neighbor = ctx.nearest(rule.direction)
        if neighbor is None:
            return False
        return evaluate_rule(rule.inner, ctx.context_of(neighbor.index))
    if isinstance(rule, AllOf):
        return all(evaluate_rule(c, ctx) for c in rule.children)
    if isinstance(rule, AnyOf):
        return any(evaluate_rule(c, ctx) for c in rule.children)
    if isinstance(rule, Not):
        return not evaluate_rule(rule.child, ctx)
    raise TypeError(f"not a rule: {rule!r}")


def apply_lf(lf: LabelingFunction, token: Token, context: TokenContext) -> int:
    """Fire an LF on one token: its attached class if the rule holds, else 0."""
    if token is not context.token and token != context.token:
        raise ValueError("token is not the subject of the given context")
    return lf.attached_class if evaluate_rule(lf.rule, context) else ABSTAIN


@dataclass(frozen=True)
class LabelMatrix:
    """Instance-by-LF firing grid.

    Entry (i, j) is 0 or the attached class of LF j. Rows follow the corpus's
    canonical instance order (corpus order, then reading order per document).
    """

    rows: np.ndarray
    lf_ids: tuple[str, ...]
    lf_classes: tuple[int, ...]
    class_names: tuple[str, ...]
    instance_index: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2 or rows.shape[1] != len(self.lf_ids):
            raise ValueError(f"matrix shape {rows.shape} does not match {len(self.lf_ids)} LFs")
        if rows.shape[0] != len(self.instance_index):
            raise ValueError("matrix rows do not match the instance index")
        attached = np.asarray(self.lf_classes, dtype=np.int64)
        bad = (rows != 0) & (rows != attached[None, :])
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise ValueError(
                f"entry ({i}, {j}) = {int(rows[i, j])} is neither 0 nor the attached "
                f"class {int(attached[j])} of LF {self.lf_ids[j]!r}"
            )

    @property
    def n_instances(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_lfs(self) -> int:
        return int(self.rows.shape[1])

    def to_obj(self) -> dict:
        return {
            "n": self.n_instances,
            "m": self.n_lfs,
            "classes": list(self.class_names),
            "lf_ids": list(self.lf_ids),
            "lf_classes": [self.class_names[k - 1] for k in self.lf_classes],
            "instances": [[doc_id, tok] for doc_id, tok in self.instance_index],
            "rows": self.rows.tolist(),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "LabelMatrix":
        class_names = tuple(obj["classes"])
        name_to_idx = {n: i + 1 for i, n in enumerate(class_names)}
        try:
            lf_classes = tuple(name_to_idx[n] for n in obj["lf_classes"])
        except KeyError as err:
            raise ValueError(f"matrix names undeclared class {err.args[0]!r}") from None
        return cls(
            rows=np.asarray(obj["rows"], dtype=np.int64).reshape(int(obj["n"]), int(obj["m"])),
            lf_ids=tuple(obj["lf_ids"]),
            lf_classes=lf_classes,
            class_names=class_names,
            instance_index=tuple((d, int(t)) for d, t in obj["instances"]),
        )

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_obj()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LabelMatrix":
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def build_label_matrix(
    lfs: list[LabelingFunction], corpus: Corpus, context_params: ContextParams
) -> LabelMatrix:
    """Fire every LF on every instance of the corpus."""
    if not lfs:
        raise ValueError("no labeling functions")
    for lf in lfs:
        if lf.attached_class > corpus.n_classes:
            raise ValueError(
                f"LF {lf.lf_id!r} attaches class {lf.attached_class} but the corpus "
                f"declares only {corpus.n_classes}"
            )
    doc_ctx = [DocContext(doc, context_params) for doc in corpus.documents]
    rows = np.zeros((corpus.n_instances, len(lfs)), dtype=np.int64)
    index: list[tuple[str, int]] = []
    for r, (d, t) in enumerate(corpus.instances):
        ctx = doc_ctx[d].context_of(t)
        tok = corpus.documents[d].tokens[t]
        for j, lf in enumerate(lfs):
            rows[r, j] = apply_lf(lf, tok, ctx)
        index.append((corpus.documents[d].doc_id, t))
    return LabelMatrix(
        rows=rows,
        lf_ids=tuple(lf.lf_id for lf in lfs),
        lf_classes=tuple(lf.attached_class for lf in lfs),
        class_names=corpus.classes,
        instance_index=tuple(index),
    )


@dataclass(frozen=True)
class LFDiagnostics:
    """Per-LF coverage and precision plus global overlap/conflict rates.

    Standard data-programming definitions: coverage is the fraction of
    instances where the LF fired; overlap the fraction where at least two LFs
    fired; conflict the fraction where fired LFs emitted different classes.
    Precision is measured against gold labels and absent for LFs that never
    fire (or when no gold is given).
    """

    coverage: tuple[float, ...]
    precision: tuple[float | None, ...]
    fires: tuple[int, ...]
    overlap: float
    conflict: float
    pairwise_overlap: np.ndarray


def diagnostics(matrix: LabelMatrix, gold: np.ndarray | None = None) -> LFDiagnostics:
    """Evaluate a label matrix; gold, when given, must align with its rows."""
    rows = matrix.rows
    n, m = rows.shape
    if gold is not None:
        gold = np.asarray(gold, dtype=np.int64)
        if gold.shape != (n,):
            raise ValueError(f"gold has length {gold.shape}, matrix has {n} rows")

    fired = rows != 0
    fires = fired.sum(axis=0)
    coverage = fires / n if n else np.zeros(m)

    precision: list[float | None] = []
    for j in range(m):
        if gold is None:
            precision.append(None)
            continue
        known = fired[:, j] & (gold > 0)  # precision is measured on the gold-labeled subset
        n_known = int(known.sum())
        if n_known == 0:
            precision.append(None)
        else:
            precision.append(int((known & (gold == matrix.lf_classes[j])).sum()) / n_known)

    per_row_fires = fired.sum(axis=1)
    overlap = float((per_row_fires >= 2).mean()) if n else 0.0
    conflict = 0.0
    if n:
        distinct = np.zeros(n, dtype=np.int64)
        for k in sorted(set(matrix.lf_classes)):
            distinct += (rows == k).any(axis=1)
        conflict = float((distinct >= 2).mean())

    pairwise = (fired.astype(np.float64).T @ fired.astype(np.float64)) / n if n else np.zeros((m, m))
    return LFDiagnostics(
        coverage=tuple(float(c) for c in coverage),
        precision=tuple(precision),
        fires=tuple(int(f) for f in fires),
        overlap=overlap,
        conflict=conflict,
        pairwise_overlap=pairwise,
    )


def diagnostics_to_obj(matrix: LabelMatrix, diag: LFDiagnostics) -> dict:
    return {
        "lfs": [
            {
                "id": matrix.lf_ids[j],
                "class": matrix.class_names[matrix.lf_classes[j] - 1],
                "coverage": diag.coverage[j],
                "precision": diag.precision[j],
                "fires": diag.fires[j],
            }
            for j in range(matrix.n_lfs)
        ],
        "overlap": diag.overlap,
        "conflict": diag.conflict,
        "pairwise_overlap": diag.pairwise_overlap.tolist(),
    }


def format_lf_report(matrix: LabelMatrix, diag: LFDiagnostics) -> str:
    """Plain-text diagnostics table, one row per LF."""
    headers = ("lf", "class", "coverage", "precision", "fires")
    table = [
        (
            matrix.lf_ids[j],
            matrix.class_names[matrix.lf_classes[j] - 1],
            f"{diag.coverage[j]:.3f}",
            "-" if diag.precision[j] is None else f"{diag.precision[j]:.3f}",
            str(diag.fires[j]),
        )
        for j in range(matrix.n_lfs)
    ]
    widths = [max(len(h), *(len(row[c]) for row in table)) for c, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for row in table:
        lines.append("  ".join(val.ljust(widths[c]) for c, val in enumerate(row)))
    lines.append("")
    lines.append(f"overlap:  {diag.overlap:.3f}")
    lines.append(f"conflict: {diag.conflict:.3f}")
    for j in range(matrix.n_lfs):
        if diag.fires[j] == 0:
            lines.append(f"warning: LF {matrix.lf_ids[j]!r} never fires")
    return "\n".join(lines) + "\n"
