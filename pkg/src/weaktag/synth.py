"""Synthetic corpora with known labels and rule suites hitting target stats.

Documents mimic line-structured receipts: each line carries word-like tokens
on the left and numeric tokens (counts, decimal amounts) toward the right,
with per-class horizontal region priors plus jitter. Generated labeling
functions are genuine rule trees (keyword, regex, region, neighbor) whose
empirical coverage and precision on the generated corpus are pushed to the
requested targets by widening or narrowing lexicons, digit/letter classes,
and regions, measuring through the real rule engine after every adjustment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import features as ft
from .documents import BBox, Corpus, Document, NormBBox, Token, split_corpus
from .evaluation import score
from .labeling import ContextParams, DocContext, build_label_matrix, evaluate_rule
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
from .training import JointTokenTagger, TrainConfig, TrainingData

PAGE_W = 1000.0
PAGE_H = 1400.0
CHAR_W = 9.0
TOKEN_H = 16.0
TOP_MARGIN = 40.0
LINE_PITCH = 26.0

TUNE_TOL = 0.05
ACCEPT_TOL = 0.1
MAX_TUNE_ITERS = 50


class SynthesisError(RuntimeError):
    """A generated LF could not reach its coverage/precision targets."""


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic benchmark corpus and its rule suite."""

    n_documents: int = 500
    tokens_min: int = 24
    tokens_max: int = 40
    n_classes: int = 3
    n_lfs: int = 8
    coverage_min: float = 0.08
    coverage_max: float = 0.25
    precision_min: float = 0.70
    precision_max: float = 0.95
    noise_rate: float = 0.05
    vocab_size: int = 240
    x_jitter: float = 0.13
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_lfs < 1:
            raise ValueError("need at least 1 LF")
        if not 1 <= self.tokens_min <= self.tokens_max:
            raise ValueError("bad tokens_per_doc range")
        for name in ("coverage_min", "coverage_max", "precision_min", "precision_max"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must be in [0, 1)")

    def coverage_targets(self) -> np.ndarray:
        return np.linspace(self.coverage_max, self.coverage_min, self.n_lfs)

    def precision_targets(self) -> np.ndarray:
        return np.linspace(self.precision_min, self.precision_max, self.n_lfs)


def _archetype(k: int, n_classes: int) -> str:
    # the last class is decimal amounts; every other class is word-like with
    # its own vocabulary, so surface shape alone cannot separate them
    return "amount" if k == n_classes - 1 else "word"


def _class_names(n_classes: int) -> tuple[str, ...]:
    names = []
    for k in range(n_classes - 1):
        names.append({0: "item", 1: "variant"}.get(k, f"field{k + 1}"))
    names.append("amount")
    return tuple(names)


def _class_centers(n_classes: int) -> np.ndarray:
    return np.linspace(0.2, 0.8, n_classes)


def _broad_pattern(archetype: str) -> str:
    if archetype == "amount":
        return r"^\$?[0-9]+\.[0-9]{2}$"
    return r"^[a-z]{3,}$"


def _subset_symbols(archetype: str) -> str:
    if archetype == "amount":
        return "0123456789"
    return "abcdefghijklmnopqrstuvwxyz"


def _subset_pattern(archetype: str, symbols: str) -> str:
    """Restriction of the broad pattern to a leading/trailing symbol class."""
    if archetype == "amount":
        return rf"^\$?[0-9]+\.[0-9][{symbols}]$"
    return rf"^[{symbols}][a-z]{{2,}}$"


def _make_vocab(rng: np.random.Generator, size: int, taken: set[str]) -> list[str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    out: list[str] = []
    while len(out) < size:
        n = int(rng.integers(3, 10))
        word = "".join(letters[i] for i in rng.integers(0, 26, size=n))
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


def _sample_text(rng: np.random.Generator, archetype: str, vocab: list[str] | None) -> str:
    if archetype == "amount":
        dollars = int(rng.integers(1, 100))
        cents = int(rng.integers(0, 100))
        text = f"{dollars}.{cents:02d}"
        return f"${text}" if rng.random() < 0.3 else text
    assert vocab is not None
    return vocab[int(rng.integers(0, len(vocab)))]


def _generate_documents(spec: SynthSpec, rng: np.random.Generator) -> Corpus:
    names = _class_names(spec.n_classes)
    centers = _class_centers(spec.n_classes)
    taken: set[str] = set()
    vocabs: dict[int, list[str]] = {
        k: _make_vocab(rng, spec.vocab_size, taken)
        for k in range(spec.n_classes)
        if _archetype(k, spec.n_classes) == "word"
    }

    docs: list[Document] = []
    for d in range(spec.n_documents):
        target = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
        tokens: list[Token] = []
        line = 0
        while len(tokens) < target:
            y0 = TOP_MARGIN + line * LINE_PITCH + float(rng.integers(-1, 2))
            line += 1
            for k in range(spec.n_classes):
                arche = _archetype(k, spec.n_classes)
                n_here = 0
                if k == 0:
                    n_here = 1 + (1 if rng.random() < 0.35 else 0)
                elif rng.random() < (0.9 if arche == "amount" else 0.75):
                    n_here = 1
                for rep in range(n_here):
                    text_k = k
                    if spec.noise_rate > 0 and rng.random() < spec.noise_rate:
                        others = [c for c in range(spec.n_classes) if c != k]
                        text_k = others[int(rng.integers(0, len(others)))]
                    text = _sample_text(rng, _archetype(text_k, spec.n_classes), vocabs.get(text_k))
                    cx = float(np.clip(centers[k] + rng.normal(0.0, spec.x_jitter), 0.04, 0.96))
                    cx += 0.055 * rep  # second token of a class sits to its right
                    w = len(text) * CHAR_W
                    x0 = min(max(cx * PAGE_W - w / 2.0, 0.0), PAGE_W - w)
                    tokens.append(
                        Token(
                            text=text,
                            bbox=BBox(x0, y0, x0 + w, y0 + TOKEN_H),
                            gold_label=k + 1,
                        )
                    )
            if TOP_MARGIN + (line + 1) * LINE_PITCH + TOKEN_H >= PAGE_H:
                break
        docs.append(
            Document(
                doc_id=f"synth{d:05d}", page_width=PAGE_W, page_height=PAGE_H, tokens=tuple(tokens)
            )
        )
    return Corpus(classes=names, documents=tuple(docs))


class _CorpusIndex:
    """Measurement harness: fires candidate rules through the real engine."""

    def __init__(self, corpus: Corpus, params: ContextParams) -> None:
        self.corpus = corpus
        self.doc_ctx = [DocContext(doc, params) for doc in corpus.documents]
        self.gold = corpus.gold_labels()
        self.n = corpus.n_instances
        # occurrence counts per normalized text, split by gold class (index 1..K)
        self.text_counts: dict[str, np.ndarray] = {}
        for r, (d, t) in enumerate(corpus.instances):
            norm = normalize_token_text(corpus.documents[d].tokens[t].text)
            counts = self.text_counts.setdefault(
                norm, np.zeros(corpus.n_classes + 1, dtype=np.int64)
            )
            counts[self.gold[r]] += 1

    def measure(self, rule: Rule, attached: int) -> tuple[float, float, int]:
        fires = 0
        hits = 0
        for d, t in self.corpus.instances:
            ctx = self.doc_ctx[d].context_of(t)
            if evaluate_rule(rule, ctx):
                fires += 1
                if ctx.token.gold_label == attached:
                    hits += 1
        coverage = fires / self.n if self.n else 0.0
        precision = hits / fires if fires else 0.0
        return coverage, precision, fires

    def word_pools(self, attached: int) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
        """(own-class words with own-fire counts, off-class words with counts)."""
        in_pool: list[tuple[str, int, int]] = []
        off_pool: list[tuple[str, int]] = []
        for text, counts in self.text_counts.items():
            own = int(counts[attached])
            other = int(counts.sum() - own)
            if own > 0:
                in_pool.append((text, own, other))
            elif other > 0:
                off_pool.append((text, other))
        # prefer pure, frequent words; lexical tie-break keeps this deterministic
        in_pool.sort(key=lambda e: (e[2] / e[1], -e[1], e[0]))
        off_pool.sort(key=lambda e: (-e[1], e[0]))
        return [(t, c) for t, c, _o in in_pool], off_pool


@dataclass
class _LexState:
    """Adjustable pieces of one generated LF."""

    archetype: str
    subject_archetype: str
    base: Rule | None = None
    base_symbols: str | None = None  # None keeps the full base
    in_symbols: str = ""
    in_words: list[str] = field(default_factory=list)
    off_words: list[str] = field(default_factory=list)
    in_pool: list[tuple[str, int]] = field(default_factory=list)
    off_pool: list[tuple[str, int]] = field(default_factory=list)
    in_cursor: int = 0
    off_cursor: int = 0

    def build(self) -> Rule:
        parts: list[Rule] = []
        if self.base is not None:
            if self.base_symbols is None:
                parts.append(self.base)
            elif self.base_symbols:
                parts.append(
                    AllOf(
                        (
                            self.base,
                            RegexRule(_subset_pattern(self.subject_archetype, self.base_symbols)),
                        )
                    )
                )
        if self.in_symbols:
            parts.append(RegexRule(_subset_pattern(self.archetype, self.in_symbols)))
        if self.in_words:
            parts.append(KeywordRule(frozenset(self.in_words)))
        if self.off_words:
            parts.append(KeywordRule(frozenset(self.off_words)))
        if not parts:
            return KeywordRule(frozenset())
        return parts[0] if len(parts) == 1 else AnyOf(tuple(parts))

    def grow_off(self) -> bool:
        if self.off_cursor < len(self.off_pool):
            self.off_words.append(self.off_pool[self.off_cursor][0])
            self.off_cursor += 1
            return True
        return False

    def shrink_off(self) -> bool:
        if self.off_words:
            self.off_words.pop()
            self.off_cursor -= 1
            return True
        return False

    def _grow_word(self) -> bool:
        if self.in_cursor < len(self.in_pool):
            self.in_words.append(self.in_pool[self.in_cursor][0])
            self.in_cursor += 1
            return True
        return False

    def grow_in(self) -> bool:
        # pure-regex family widens its symbol class first; a base rule is
        # topped up with precise lexicon words before it is widened itself
        if self.base is None and self.archetype != "word":
            full = _subset_symbols(self.archetype)
            if len(self.in_symbols) < len(full):
                self.in_symbols = full[: len(self.in_symbols) + 1]
                return True
        if self._grow_word():
            return True
        if self.base is not None and self.base_symbols is not None:
            full = _subset_symbols(self.subject_archetype)
            if len(self.base_symbols) < len(full):
                self.base_symbols = full[: len(self.base_symbols) + 1]
                return True
        return False

    def shrink_in(self) -> bool:
        # a base rule is narrowed before precise lexicon words are dropped
        if self.base is not None:
            full = _subset_symbols(self.subject_archetype)
            if self.base_symbols is None:
                self.base_symbols = full[: max(1, len(full) // 2)]
                return True
            if len(self.base_symbols) > 1:
                self.base_symbols = self.base_symbols[:-1]
                return True
        if self.in_symbols and len(self.in_symbols) > 1:
            self.in_symbols = self.in_symbols[:-1]
            return True
        if self.in_words:
            self.in_words.pop()
            self.in_cursor -= 1
            return True
        return False


def _tune_lexical(
    index: _CorpusIndex,
    attached: int,
    archetype: str,
    cov_target: float,
    prec_target: float,
    base: Rule | None,
    subject_archetype: str,
    lf_name: str,
) -> Rule:
    """Hill-climb lexicons and symbol classes until both targets are close."""
    n = index.n
    in_pool, off_pool = index.word_pools(attached)
    state = _LexState(
        archetype=archetype,
        subject_archetype=subject_archetype,
        base=base,
        in_pool=in_pool,
        off_pool=off_pool,
    )

    f_total = cov_target * n
    f_in = prec_target * f_total
    f_off = (1.0 - prec_target) * f_total
    word_purity = 0.98  # the pool is purity-sorted, so early words are near-pure
    if base is not None:
        # solve the base/lexicon mix: keep just enough of the (imprecise)
        # base that topping up with near-pure words lands on both targets
        cov_b, prec_b, _fires_b = index.measure(base, attached)
        keep_cov = cov_target * (word_purity - prec_target) / max(word_purity - prec_b, 0.02)
        keep_cov = float(np.clip(keep_cov, 0.0, cov_target))
        full = _subset_symbols(subject_archetype)
        if cov_b > max(keep_cov, cov_target) * 1.1:
            state.base_symbols = full[: max(1, round(keep_cov / max(cov_b, 1e-9) * len(full)))]
            cov_b = cov_b * len(state.base_symbols) / len(full)
        got = 0.0
        need_words = max(0.0, (cov_target - cov_b)) * n
        while state.in_cursor < len(in_pool) and got < need_words:
            word, cnt = in_pool[state.in_cursor]
            state.in_words.append(word)
            state.in_cursor += 1
            got += cnt
        f_off = max(0.0, f_off - (1.0 - prec_b) * cov_b * n)
    elif archetype != "word":
        per_symbol = max(float((index.gold == attached).mean()) / 10.0, 1e-9)
        full = _subset_symbols(archetype)
        n_sym = max(1, min(len(full), round(cov_target * prec_target / per_symbol)))
        state.in_symbols = full[:n_sym]
    else:
        got = 0.0
        while state.in_cursor < len(in_pool) and got < f_in:
            word, cnt = in_pool[state.in_cursor]
            state.in_words.append(word)
            state.in_cursor += 1
            got += cnt

    seeded = 0.0
    while state.off_cursor < len(off_pool) and seeded < f_off * 0.8:
        word, cnt = off_pool[state.off_cursor]
        state.off_words.append(word)
        state.off_cursor += 1
        seeded += cnt

    avg_in = float(np.mean([c for _w, c in in_pool[:200]])) if in_pool else 1.0
    avg_off = float(np.mean([c for _w, c in off_pool[:200]])) if off_pool else 1.0

    def repeat(move, times: int) -> bool:
        moved = False
        for _ in range(max(1, times)):
            if not move():
                break
            moved = True
        return moved

    best: tuple[float, Rule] | None = None
    for _ in range(MAX_TUNE_ITERS):
        rule = state.build()
        cov, prec, _fires = index.measure(rule, attached)
        err = max(abs(cov - cov_target), abs(prec - prec_target))
        if best is None or err < best[0]:
            best = (err, rule)
        if err <= TUNE_TOL:
            return rule
        dc, dp = cov - cov_target, prec - prec_target
        n_in = min(6, round(abs(dc) * n / max(avg_in, 1.0)))
        n_off = min(30, round(abs(dc) * n / max(avg_off, 1.0)))

        moved = False
        if dc > TUNE_TOL:
            moved = repeat(state.shrink_off, n_off) if dp < 0 else repeat(state.shrink_in, n_in)
            moved = moved or state.shrink_in() or state.shrink_off()
        elif dc < -TUNE_TOL:
            moved = repeat(state.grow_off, n_off) if dp > 0 else repeat(state.grow_in, n_in)
            moved = moved or state.grow_in() or state.grow_off()
        elif dp > TUNE_TOL:
            moved = state.grow_off()
        else:
            moved = state.shrink_off() or state.grow_in()
        if not moved:
            break

    assert best is not None
    err, rule = best
    if err > ACCEPT_TOL:
        raise SynthesisError(
            f"{lf_name}: could not reach coverage {cov_target:.2f} / precision "
            f"{prec_target:.2f} within {MAX_TUNE_ITERS} adjustments (best error {err:.3f})"
        )
    return rule


def _tune_region(
    index: _CorpusIndex,
    attached: int,
    cov_target: float,
    prec_target: float,
    centers: np.ndarray,
    lf_name: str,
) -> Rule:
    """Adjust a vertical band: width fixes coverage, lateral shift fixes precision."""
    cx = float(centers[attached - 1])
    others = [float(c) for i, c in enumerate(centers) if i != attached - 1]
    toward = min(others, key=lambda c: abs(c - cx)) if others else cx
    sign = 1.0 if toward > cx else -1.0

    w, s = 0.05, 0.0
    best: tuple[float, Rule] | None = None
    for _ in range(MAX_TUNE_ITERS):
        x0 = max(0.0, min(cx + s - w, 1.0))
        x1 = max(0.0, min(cx + s + w, 1.0))
        rule = RegionRule(NormBBox(x0, 0.0, x1, 1.0))
        cov, prec, _fires = index.measure(rule, attached)
        err = max(abs(cov - cov_target), abs(prec - prec_target))
        if best is None or err < best[0]:
            best = (err, rule)
        if err <= TUNE_TOL:
            return rule
        if abs(cov - cov_target) > TUNE_TOL:
            w = float(np.clip(w * (cov_target / max(cov, 1e-4)) ** 0.8, 0.004, 0.45))
        elif prec - prec_target > TUNE_TOL:
            s += sign * 0.02
        else:
            s -= sign * 0.02
        if abs(s) > 0.5:
            break
    assert best is not None
    err, rule = best
    if err > ACCEPT_TOL:
        raise SynthesisError(
            f"{lf_name}: region tuning stalled at error {err:.3f} "
            f"(targets coverage {cov_target:.2f}, precision {prec_target:.2f})"
        )
    return rule


def _coverage_band(
    index: _CorpusIndex, attached: int, cov_target: float, centers: np.ndarray
) -> Rule:
    """A vertical band tuned for coverage alone (precision left to boosters)."""
    cx = float(centers[attached - 1])
    w = 0.05
    best: tuple[float, Rule] | None = None
    for _ in range(20):
        rule = RegionRule(NormBBox(max(0.0, cx - w), 0.0, min(1.0, cx + w), 1.0))
        cov, _prec, _fires = index.measure(rule, attached)
        err = abs(cov - cov_target)
        if best is None or err < best[0]:
            best = (err, rule)
        if err <= TUNE_TOL:
            return rule
        w = float(np.clip(w * (cov_target / max(cov, 1e-4)) ** 0.8, 0.004, 0.45))
    assert best is not None
    return best[1]


def _neighbor_base(k: int, n_classes: int) -> Rule:
    """Contextual archetype rule built from the line structure.

    Lines read [item(s), middle word classes, amount], so: an item is a word
    NOT immediately followed by an amount; a middle-class word immediately
    precedes the next class; an amount follows a word.
    """
    word = RegexRule(_broad_pattern("word"))
    amount = RegexRule(_broad_pattern("amount"))
    if k == n_classes - 1:
        return AllOf((amount, NeighborRule("left", word)))
    if k == 0:
        return AllOf((word, Not(NeighborRule("right", amount))))
    inner = amount if k + 1 == n_classes - 1 else word
    return AllOf((word, NeighborRule("right", inner)))


_FAMILY_CYCLE = ("lexical", "region", "neighbor")


def _build_lfs(spec: SynthSpec, index: _CorpusIndex) -> list[LabelingFunction]:
    centers = _class_centers(spec.n_classes)
    names = _class_names(spec.n_classes)
    cov_targets = spec.coverage_targets()
    prec_targets = spec.precision_targets()
    lfs: list[LabelingFunction] = []
    for j in range(spec.n_lfs):
        k = j % spec.n_classes
        family = _FAMILY_CYCLE[(j // spec.n_classes) % len(_FAMILY_CYCLE)]
        cov_t, prec_t = float(cov_targets[j]), float(prec_targets[j])
        arche = _archetype(k, spec.n_classes)
        lf_id = f"lf{j:02d}_{family}_{names[k]}"
        if family == "region":
            try:
                rule = _tune_region(index, k + 1, cov_t, prec_t, centers, lf_id)
            except SynthesisError:
                # the band alone cannot reach the precision target; keep a
                # coverage-matched band as the base and top up with lexicon
                rule = _tune_lexical(
                    index,
                    k + 1,
                    arche,
                    cov_t,
                    prec_t,
                    base=_coverage_band(index, k + 1, cov_t, centers),
                    subject_archetype=arche,
                    lf_name=lf_id,
                )
        elif family == "neighbor":
            rule = _tune_lexical(
                index,
                k + 1,
                arche,
                cov_t,
                prec_t,
                base=_neighbor_base(k, spec.n_classes),
                subject_archetype=arche,
                lf_name=lf_id,
            )
        else:
            rule = _tune_lexical(
                index,
                k + 1,
                arche,
                cov_t,
                prec_t,
                base=None,
                subject_archetype=arche,
                lf_name=lf_id,
            )
        lfs.append(LabelingFunction(lf_id=lf_id, attached_class=k + 1, rule=rule))
    return lfs


@lru_cache(maxsize=6)
def _generate_cached(
    spec: SynthSpec, params: ContextParams
) -> tuple[Corpus, tuple[LabelingFunction, ...]]:
    rng = np.random.default_rng(spec.seed)
    corpus = _generate_documents(spec, rng)
    index = _CorpusIndex(corpus, params)
    return corpus, tuple(_build_lfs(spec, index))


def generate(
    spec: SynthSpec, context_params: ContextParams = ContextParams()
) -> tuple[Corpus, list[LabelingFunction]]:
    """Deterministic corpus plus tuned rule suite for a spec and seed."""
    corpus, lfs = _generate_cached(spec, context_params)
    return corpus, list(lfs)


@dataclass
class SweepCell:
    labeled_frac: float
    unlabeled_frac: float
    seed: int
    baseline_f1: float
    joint_f1: float

    def to_obj(self) -> dict:
        return {
            "labeled_frac": self.labeled_frac,
            "unlabeled_frac": self.unlabeled_frac,
            "seed": self.seed,
            "baseline_f1": self.baseline_f1,
            "joint_f1": self.joint_f1,
        }


@dataclass
class SweepResult:
    cells: list[SweepCell]

    def mean(self, labeled_frac: float, unlabeled_frac: float, which: str) -> float:
        vals = [
            getattr(c, which)
            for c in self.cells
            if c.labeled_frac == labeled_frac and c.unlabeled_frac == unlabeled_frac
        ]
        if not vals:
            raise KeyError(f"no cells at L={labeled_frac}, U={unlabeled_frac}")
        return float(np.mean(vals))

    def settings(self) -> list[tuple[float, float]]:
        seen: list[tuple[float, float]] = []
        for c in self.cells:
            key = (c.labeled_frac, c.unlabeled_frac)
            if key not in seen:
                seen.append(key)
        return seen

    def to_obj(self) -> dict:
        return {
            "cells": [c.to_obj() for c in self.cells],
            "summary": [
                {
                    "labeled_frac": lf,
                    "unlabeled_frac": uf,
                    "baseline_f1_mean": self.mean(lf, uf, "baseline_f1"),
                    "joint_f1_mean": self.mean(lf, uf, "joint_f1"),
                }
                for lf, uf in self.settings()
            ],
        }

    def format_table(self) -> str:
        headers = ("L%", "U%", "seeds", "baseline F1", "joint F1", "delta")
        rows = []
        for lf, uf in self.settings():
            n_seeds = len(
                [c for c in self.cells if (c.labeled_frac, c.unlabeled_frac) == (lf, uf)]
            )
            base = self.mean(lf, uf, "baseline_f1")
            joint = self.mean(lf, uf, "joint_f1")
            rows.append(
                (
                    f"{100 * lf:g}",
                    f"{100 * uf:g}",
                    str(n_seeds),
                    f"{base:.4f}",
                    f"{joint:.4f}",
                    f"{joint - base:+.4f}",
                )
            )
        widths = [max(len(h), *(len(r[c]) for r in rows)) for c, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(headers))]
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(v.ljust(widths[c]) for c, v in enumerate(r)) for r in rows)
        return "\n".join(lines) + "\n"


def run_sweep(
    spec: SynthSpec,
    labeled_fractions: list[float],
    unlabeled_fractions: list[float] | None,
    seeds: list[int],
    config: TrainConfig | None = None,
    context_params: ContextParams = ContextParams(),
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> SweepResult:
    """Train baseline and joint modes for every (L, U, seed) cell.

    When unlabeled_fractions is None, each labeled fraction uses the corpus
    remainder after the fixed validation/test fractions; otherwise validation
    and test evenly split whatever the explicit (L, U) pair leaves over.
    """
    config = config or TrainConfig()
    cells: list[SweepCell] = []
    for seed in seeds:
        corpus, lfs = generate(replace(spec, seed=seed), context_params)
        matrix = build_label_matrix(lfs, corpus, context_params)
        feats = ft.featurize_corpus(corpus, context_params, config.hash_bits)
        gold_full = corpus.gold_labels()
        for lab_frac in labeled_fractions:
            if unlabeled_fractions is None:
                u_list = [round(1.0 - lab_frac - val_fraction - test_fraction, 10)]
            else:
                u_list = list(unlabeled_fractions)
            for unl_frac in u_list:
                rest = 1.0 - lab_frac - unl_frac
                if rest < -1e-9:
                    raise ValueError(f"fractions L={lab_frac}, U={unl_frac} exceed 1")
                split = split_corpus(corpus, lab_frac, rest / 2.0, rest / 2.0, seed)
                rows = split.rows(corpus)
                gold = gold_full.copy()
                gold[rows["unlabeled"]] = 0
                data = TrainingData(
                    features=feats,
                    firings=matrix.rows,
                    attached=np.asarray(matrix.lf_classes, dtype=np.int64),
                    gold=gold,
                    class_names=corpus.classes,
                    rows_labeled=rows["labeled"],
                    rows_unlabeled=rows["unlabeled"],
                    rows_validation=rows["validation"],
                    rows_test=rows["test"],
                )
                params = {**config.__dict__, "seed": seed}
                joint = JointTokenTagger(**params).fit(data)
                baseline = JointTokenTagger(
                    **{**params, "w_gm": 0.0, "w_kl": 0.0, "w_qg": 0.0}
                ).fit(data)
                test_rows = rows["test"]
                test_gold = gold_full[test_rows]
                f1_joint = score(
                    test_gold, joint.predict(feats, test_rows), corpus.classes
                ).macro_f1
                f1_base = score(
                    test_gold, baseline.predict(feats, test_rows), corpus.classes
                ).macro_f1
                cells.append(
                    SweepCell(
                        labeled_frac=lab_frac,
                        unlabeled_frac=unl_frac,
                        seed=seed,
                        baseline_f1=f1_base,
                        joint_f1=f1_joint,
                    )
                )
    return SweepResult(cells=cells)
