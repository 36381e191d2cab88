"""Declarative labeling-rule grammar and suite parsing.

A suite file is a JSON array of objects ``{"id", "class", "rule"}`` where
``rule`` is a tagged tree:

    {"type": "regex",    "pattern": "^[0-9]+\\.[0-9]{2}$"}
    {"type": "keyword",  "lexicon": ["total", "subtotal"], "match_mode": "exact"}
    {"type": "region",   "x0": 0.5, "y0": 0.0, "x1": 1.0, "y1": 0.3}
    {"type": "neighbor", "direction": "left", "rule": {...}}
    {"type": "all_of",   "children": [...]}
    {"type": "any_of",   "children": [...]}
    {"type": "not",      "child": {...}}

Regex matching is unanchored substring search unless the pattern anchors
itself. Keyword matching lowercases the token text and strips leading and
trailing punctuation before comparison.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Union

from .documents import NormBBox

MAX_RULE_DEPTH = 8
DIRECTIONS = ("left", "right", "above", "below")
MATCH_MODES = ("exact", "prefix")

_PUNCT = string.punctuation


class SuiteFormatError(ValueError):
    """A rule suite violates the file format or a rule invariant."""


def normalize_token_text(text: str) -> str:
    """Canonical keyword form: strip edge punctuation, then lowercase."""
    return text.strip(_PUNCT).lower()


@dataclass(frozen=True)
class RegexRule:
    pattern: str

    def __post_init__(self) -> None:
        try:
            re.compile(self.pattern)
        except re.error as err:
            raise ValueError(f"regex {self.pattern!r} does not compile: {err}") from None


@dataclass(frozen=True)
class KeywordRule:
    lexicon: frozenset[str]
    match_mode: str = "exact"

    def __post_init__(self) -> None:
        if self.match_mode not in MATCH_MODES:
            raise ValueError(f"match_mode must be one of {MATCH_MODES}, got {self.match_mode!r}")
        object.__setattr__(self, "lexicon", frozenset(w.lower() for w in self.lexicon))


@dataclass(frozen=True)
class RegionRule:
    region: NormBBox


@dataclass(frozen=True)
class NeighborRule:
    direction: str
    inner: "Rule"

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


@dataclass(frozen=True)
class AllOf:
    children: tuple["Rule", ...]


@dataclass(frozen=True)
class AnyOf:
    children: tuple["Rule", ...]


@dataclass(frozen=True)
class Not:
    child: "Rule"


Rule = Union[RegexRule, KeywordRule, RegionRule, NeighborRule, AllOf, AnyOf, Not]


def rule_depth(rule: Rule) -> int:
    if isinstance(rule, NeighborRule):
        return 1 + rule_depth(rule.inner)
    if isinstance(rule, (AllOf, AnyOf)):
        return 1 + max((rule_depth(c) for c in rule.children), default=0)
    if isinstance(rule, Not):
        return 1 + rule_depth(rule.child)
    return 1


def parse_rule(obj: object, where: str, depth: int = 1) -> Rule:
    """Compile one tagged rule object, enforcing the depth cap."""
    if depth > MAX_RULE_DEPTH:
        raise SuiteFormatError(f"{where}: rule tree deeper than {MAX_RULE_DEPTH}")
    if not isinstance(obj, dict):
        raise SuiteFormatError(f"{where}: rule must be an object")
    kind = obj.get("type")
    try:
        if kind == "regex":
            return RegexRule(pattern=_get_str(obj, "pattern", where))
        if kind == "keyword":
            lex = obj.get("lexicon")
            if not isinstance(lex, list) or not all(isinstance(w, str) for w in lex):
                raise SuiteFormatError(f"{where}: 'lexicon' must be an array of strings")
            return KeywordRule(
                lexicon=frozenset(lex), match_mode=obj.get("match_mode", "exact")
            )
        if kind == "region":
            try:
                coords = [float(obj[k]) for k in ("x0", "y0", "x1", "y1")]
            except (KeyError, TypeError, ValueError):
                raise SuiteFormatError(f"{where}: region needs numeric x0, y0, x1, y1") from None
            return RegionRule(region=NormBBox(*coords))
        if kind == "neighbor":
            return NeighborRule(
                direction=_get_str(obj, "direction", where),
                inner=parse_rule(obj.get("rule"), where, depth + 1),
            )
        if kind == "all_of" or kind == "any_of":
            raw = obj.get("children")
            if not isinstance(raw, list):
                raise SuiteFormatError(f"{where}: '{kind}' needs a 'children' array")
            children = tuple(parse_rule(c, where, depth + 1) for c in raw)
            return AllOf(children) if kind == "all_of" else AnyOf(children)
        if kind == "not":
            return Not(child=parse_rule(obj.get("child"), where, depth + 1))
    except ValueError as err:
        if isinstance(err, SuiteFormatError):
            raise
        raise SuiteFormatError(f"{where}: {err}") from None
    raise SuiteFormatError(f"{where}: unknown rule type {kind!r}")


def _get_str(obj: dict, key: str, where: str) -> str:
    val = obj.get(key)
    if not isinstance(val, str):
        raise SuiteFormatError(f"{where}: missing or non-string field {key!r}")
    return val


def rule_to_obj(rule: Rule) -> dict:
    """Inverse of parse_rule; round-trips through JSON."""
    if isinstance(rule, RegexRule):
        return {"type": "regex", "pattern": rule.pattern}
    if isinstance(rule, KeywordRule):
        return {"type": "keyword", "lexicon": sorted(rule.lexicon), "match_mode": rule.match_mode}
    if isinstance(rule, RegionRule):
        r = rule.region
        return {"type": "region", "x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1}
    if isinstance(rule, NeighborRule):
        return {"type": "neighbor", "direction": rule.direction, "rule": rule_to_obj(rule.inner)}
    if isinstance(rule, AllOf):
        return {"type": "all_of", "children": [rule_to_obj(c) for c in rule.children]}
    if isinstance(rule, AnyOf):
        return {"type": "any_of", "children": [rule_to_obj(c) for c in rule.children]}
    if isinstance(rule, Not):
        return {"type": "not", "child": rule_to_obj(rule.child)}
    raise TypeError(f"not a rule: {rule!r}")


@dataclass(frozen=True)
class LabelingFunction:
    """A rule attached to one class: it emits that class index or 0."""

    lf_id: str
    attached_class: int
    rule: Rule

    def __post_init__(self) -> None:
        if not self.lf_id:
            raise ValueError("lf_id must be non-empty")
        if self.attached_class < 1:
            raise ValueError(f"attached_class must be >= 1, got {self.attached_class}")


def parse_lf_suite(
    source: str | Path | IO[str] | IO[bytes], class_vocab: tuple[str, ...] | list[str]
) -> list[LabelingFunction]:
    """Parse and validate a suite file against a class vocabulary."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise SuiteFormatError(f"suite is not valid JSON: {err.msg}") from None
    if not isinstance(raw, list):
        raise SuiteFormatError("suite must be a JSON array of {id, class, rule} objects")

    class_to_idx = {name: i + 1 for i, name in enumerate(class_vocab)}
    lfs: list[LabelingFunction] = []
    seen: set[str] = set()
    for pos, obj in enumerate(raw):
        where = f"suite entry {pos}"
        if not isinstance(obj, dict):
            raise SuiteFormatError(f"{where}: must be an object")
        lf_id = obj.get("id")
        if not isinstance(lf_id, str) or not lf_id:
            raise SuiteFormatError(f"{where}: missing or empty field 'id'")
        where = f"LF {lf_id!r}"
        if lf_id in seen:
            raise SuiteFormatError(f"{where}: duplicate id")
        seen.add(lf_id)
        cls = obj.get("class")
        if cls not in class_to_idx:
            raise SuiteFormatError(f"{where}: class {cls!r} is not declared in the vocabulary")
        rule = parse_rule(obj.get("rule"), where)
        lfs.append(LabelingFunction(lf_id=lf_id, attached_class=class_to_idx[cls], rule=rule))
    return lfs


def suite_to_json(lfs: list[LabelingFunction], class_vocab: tuple[str, ...] | list[str]) -> str:
    entries = [
        {
            "id": lf.lf_id,
            "class": class_vocab[lf.attached_class - 1],
            "rule": rule_to_obj(lf.rule),
        }
        for lf in lfs
    ]
    return json.dumps(entries, indent=2) + "\n"
