"""Text cleaning: a general pass plus configurable per-unit rules.

``clean_general`` is an idempotent normalizer (whitespace, emoji, garbled
bytes, width folding, optional case/variant folding) with exact per-option
change counts. ``clean_specialized`` applies ordered drop/replace rules at
document, paragraph, or sentence granularity.

Unit boundaries: paragraphs split on blank lines; sentences end at one of
``。！？.!?`` where the fullwidth terminators always close a sentence and the
ASCII ones only when followed by whitespace or end of text (so ``3.14`` and
``e.g.`` survive).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable

from .model import (
    Document,
    FilterVerdict,
    VerdictDecision,
    VerdictStage,
    copy_document,
)

_DATA_DIR = Path(__file__).parent / "data"

ALL_UNITS_REMOVED = "all_units_removed"


# ---------------------------------------------------------------------------
# General cleaning


@dataclass(slots=True)
class CleanOptions:
    normalize_whitespace: bool = True
    strip_emoji: bool = True
    strip_garbled: bool = True
    fold_width: bool = True
    fold_case: str = "off"  # off | lower
    zh_fold: str = "off"  # off | to_simplified | to_traditional

    def validate(self) -> None:
        if self.fold_case not in ("off", "lower"):
            raise ValueError(f"fold_case must be off|lower, got {self.fold_case!r}")
        if self.zh_fold not in ("off", "to_simplified", "to_traditional"):
            raise ValueError(f"zh_fold invalid: {self.zh_fold!r}")


@lru_cache(maxsize=1)
def _emoji_pattern() -> re.Pattern[str]:
    ranges = json.loads((_DATA_DIR / "emoji_ranges.json").read_text(encoding="utf-8"))
    parts = "".join(
        re.escape(chr(lo)) if lo == hi else f"{re.escape(chr(lo))}-{re.escape(chr(hi))}"
        for lo, hi in ranges
    )
    return re.compile(f"[{parts}]")


@lru_cache(maxsize=4)
def _zh_tables() -> tuple[dict[int, str], dict[int, str], re.Pattern[str], re.Pattern[str]]:
    raw = json.loads((_DATA_DIR / "zh_variants.json").read_text(encoding="utf-8"))
    s2t: dict[int, str] = {ord(k): v for k, v in raw["simplified_to_traditional"].items()}
    t2s: dict[int, str] = {ord(v): k for k, v in raw["simplified_to_traditional"].items()}
    s_class = re.compile("[" + "".join(re.escape(chr(c)) for c in s2t) + "]")
    t_class = re.compile("[" + "".join(re.escape(chr(c)) for c in t2s) + "]")
    return s2t, t2s, s_class, t_class

# Width folding: the contiguous fullwidth ASCII block plus ideographic space.
WIDTH_FOLD_TABLE = {0xFF01 + i: chr(0x21 + i) for i in range(0x5E)}
WIDTH_FOLD_TABLE[0x3000] = " "
_WIDTH_PATTERN = re.compile("[！-～　]")

# Garbled: replacement character and C0/C1 controls minus newline and tab.
_GARBLED_PATTERN = re.compile("[\x00-\x08\x0b-\x1f\x80-\x9f\ufffd]")

# Horizontal whitespace: any whitespace except newline.
_TRAILING_WS = re.compile(r"[^\S\n]+(?=\n|$)")
_WS_RUN = re.compile(r"[^\S\n]+")
_NEWLINE_RUN = re.compile(r"\n{3,}")


def _counted_sub(pattern: re.Pattern[str], repl: str, text: str) -> tuple[str, int]:
    """Like subn, but counts only substitutions that changed the match."""
    changed = 0

    def replace(match: re.Match[str]) -> str:
        nonlocal changed
        if match.group(0) != repl:
            changed += 1
        return repl

    return pattern.sub(replace, text), changed


def _normalize_whitespace(text: str) -> tuple[str, int]:
    text, n_trail = _counted_sub(_TRAILING_WS, "", text)
    text, n_runs = _counted_sub(_WS_RUN, " ", text)
    text, n_lines = _counted_sub(_NEWLINE_RUN, "\n\n", text)
    return text, n_trail + n_runs + n_lines


def clean_general(text: str, opts: CleanOptions | None = None) -> tuple[str, dict[str, int]]:
    """Apply the enabled normalizations; returns (cleaned, per-option change counts).

    Idempotent: ``clean_general(clean_general(t)[0])[0] == clean_general(t)[0]``.
    Counts are exact for the first application (removed characters for the
    stripping options, converted characters for the folding ones, changing
    substitutions for whitespace).
    """
    if opts is None:
        opts = CleanOptions()
    opts.validate()
    counts: dict[str, int] = {}

    if opts.strip_garbled:
        text, n = _GARBLED_PATTERN.subn("", text)
        counts["strip_garbled"] = n
    if opts.strip_emoji:
        text, n = _emoji_pattern().subn("", text)
        counts["strip_emoji"] = n
    if opts.fold_width:
        n = len(_WIDTH_PATTERN.findall(text))
        if n:
            text = text.translate(WIDTH_FOLD_TABLE)
        counts["fold_width"] = n
    if opts.zh_fold != "off":
        s2t, t2s, s_class, t_class = _zh_tables()
        table, pattern = (t2s, t_class) if opts.zh_fold == "to_simplified" else (s2t, s_class)
        n = len(pattern.findall(text))
        if n:
            text = text.translate(table)
        counts["zh_fold"] = n
    if opts.fold_case != "off":
        lowered = text.lower()
        if len(lowered) == len(text):
            n = sum(1 for a, b in zip(text, lowered) if a != b)
        else:
            n = sum(1 for c in text if c.lower() != c)
        text = lowered
        counts["fold_case"] = n
    if opts.normalize_whitespace:
        text, n = _normalize_whitespace(text)
        counts["normalize_whitespace"] = n
    return text, counts


# ---------------------------------------------------------------------------
# Specialized rules

GRANULARITIES = ("document", "paragraph", "sentence")
MATCH_KINDS = ("literal", "prefix", "regex", "length")
ACTION_KINDS = ("drop_unit", "replace_with")


class CleanConfigError(ValueError):
    """Invalid rule configuration; raised before any document is touched."""


@dataclass(slots=True)
class CleanRule:
    name: str
    granularity: str
    match_kind: str
    match_value: str | None = None  # pattern text for literal/prefix/regex
    min_length: int | None = None  # length predicate bounds, inclusive
    max_length: int | None = None
    action: str = "drop_unit"
    replacement: str = ""
    _regex: re.Pattern[str] | None = field(default=None, repr=False, compare=False)

    def compile(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise CleanConfigError(f"rule {self.name!r}: bad granularity {self.granularity!r}")
        if self.match_kind not in MATCH_KINDS:
            raise CleanConfigError(f"rule {self.name!r}: bad match kind {self.match_kind!r}")
        if self.action not in ACTION_KINDS:
            raise CleanConfigError(f"rule {self.name!r}: bad action {self.action!r}")
        if self.match_kind == "length":
            if self.min_length is None and self.max_length is None:
                raise CleanConfigError(f"rule {self.name!r}: length match without bounds")
        elif not isinstance(self.match_value, str) or self.match_value == "":
            raise CleanConfigError(f"rule {self.name!r}: match value must be a non-empty string")
        if self.match_kind == "regex":
            try:
                self._regex = re.compile(self.match_value)  # type: ignore[arg-type]
            except re.error as exc:
                raise CleanConfigError(f"rule {self.name!r}: invalid regex: {exc}") from None

    def matches(self, unit: str) -> bool:
        if self.match_kind == "literal":
            return self.match_value in unit  # type: ignore[operator]
        if self.match_kind == "prefix":
            return unit.startswith(self.match_value)  # type: ignore[arg-type]
        if self.match_kind == "regex":
            return self._regex.search(unit) is not None  # type: ignore[union-attr]
        lo = self.min_length if self.min_length is not None else 0
        hi = self.max_length if self.max_length is not None else float("inf")
        return lo <= len(unit) <= hi

    def rewrite(self, unit: str) -> str:
        """Apply replace_with semantics to a matching unit."""
        if self.match_kind == "literal":
            return unit.replace(self.match_value, self.replacement)  # type: ignore[arg-type]
        if self.match_kind == "prefix":
            return self.replacement + unit[len(self.match_value) :]  # type: ignore[arg-type]
        if self.match_kind == "regex":
            return self._regex.sub(self.replacement, unit)  # type: ignore[union-attr]
        return self.replacement  # length match: replace the whole unit


def rule_from_dict(raw: dict[str, Any], index: int) -> CleanRule:
    match = raw.get("match", {})
    action = raw.get("action", {})
    rule = CleanRule(
        name=str(raw.get("name", f"rule_{index}")),
        granularity=str(raw.get("granularity", "")),
        match_kind=str(match.get("kind", "")),
        match_value=match.get("value"),
        min_length=match.get("min"),
        max_length=match.get("max"),
        action=str(action.get("kind", "drop_unit")),
        replacement=str(action.get("value", "")),
    )
    rule.compile()
    return rule


def load_clean_rules(source: str | Path | list[dict[str, Any]]) -> list[CleanRule]:
    """Load and validate a rules file (JSON list); bad config fails fast."""
    if isinstance(source, (str, Path)):
        raw = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        raw = source
    if not isinstance(raw, list):
        raise CleanConfigError("rules file must contain a JSON list")
    return [rule_from_dict(item, i) for i, item in enumerate(raw)]


@dataclass(slots=True)
class CleanChange:
    rule: str
    granularity: str
    action: str
    unit_preview: str


_PARA_SEP = re.compile(r"(\n{2,})")
# Sentence end: fullwidth terminator anywhere, ASCII terminator only before
# whitespace or end of unit; trailing whitespace stays with the sentence.
_SENT_END = re.compile(r"(?:[。！？]|[.!?](?=\s|$))\s*")


def split_paragraphs(text: str) -> list[tuple[str, str]]:
    """(paragraph, trailing separator) pairs; concatenation restores text."""
    parts = _PARA_SEP.split(text)
    pairs = []
    for i in range(0, len(parts), 2):
        sep = parts[i + 1] if i + 1 < len(parts) else ""
        pairs.append((parts[i], sep))
    return pairs


def split_sentences(paragraph: str) -> list[str]:
    """Sentence units (with their trailing whitespace); concatenation restores
    the paragraph exactly."""
    cuts = [m.end() for m in _SENT_END.finditer(paragraph)]
    units = []
    start = 0
    for cut in cuts:
        units.append(paragraph[start:cut])
        start = cut
    if start < len(paragraph):
        units.append(paragraph[start:])
    return [u for u in units if u != ""]


def _apply_to_units(
    units: list[str], rule: CleanRule, changes: list[CleanChange]
) -> list[str | None]:
    out: list[str | None] = []
    for unit in units:
        if unit is None or not rule.matches(unit):
            out.append(unit)
            continue
        changes.append(
            CleanChange(rule.name, rule.granularity, rule.action, unit[:40])
        )
        if rule.action == "drop_unit":
            out.append(None)
        else:
            out.append(rule.rewrite(unit))
    return out


def clean_specialized(
    doc: Document, rules: list[CleanRule]
) -> tuple[Document, list[CleanChange]]:
    """Apply rules in declared order; returns the new document and a change log.

    Document-granularity drops attach a FilterVerdict instead of emptying the
    text; if paragraph/sentence drops remove every unit, the document comes
    back with empty text and a ``all_units_removed`` drop verdict.
    """
    changes: list[CleanChange] = []
    text = doc.text
    had_content = text != ""

    for rule in rules:
        if rule.granularity == "document":
            if not rule.matches(text):
                continue
            changes.append(CleanChange(rule.name, "document", rule.action, text[:40]))
            if rule.action == "drop_unit":
                dropped = copy_document(doc, verdicts=list(doc.verdicts))
                dropped.verdicts.append(
                    FilterVerdict(VerdictStage.CLEAN, VerdictDecision.DROP, rule.name)
                )
                return dropped, changes
            text = rule.rewrite(text)
        elif rule.granularity == "paragraph":
            pairs = split_paragraphs(text)
            kept_units = _apply_to_units([p for p, _ in pairs], rule, changes)
            pieces = [u + sep for u, (_, sep) in zip(kept_units, pairs) if u is not None]
            text = "".join(pieces)
            if pieces and kept_units[-1] is None:
                text = text.rstrip("\n")
            if all(u is None for u in kept_units):
                text = ""
        else:  # sentence granularity, applied within each paragraph
            pairs = split_paragraphs(text)
            new_paras: list[str] = []
            seps: list[str] = []
            for para, sep in pairs:
                units = split_sentences(para)
                kept = _apply_to_units(units, rule, changes)
                rebuilt = "".join(u for u in kept if u is not None)
                new_paras.append(rebuilt)
                seps.append(sep)
            pieces = [p + s for p, s in zip(new_paras, seps) if p != ""]
            text = "".join(pieces)
            if new_paras and new_paras[-1] == "":
                text = text.rstrip("\n")

    if text == doc.text:
        return doc, changes
    new_doc = copy_document(doc, text=text, verdicts=list(doc.verdicts))
    if had_content and text == "":
        new_doc.verdicts.append(
            FilterVerdict(VerdictStage.CLEAN, VerdictDecision.DROP, ALL_UNITS_REMOVED)
        )
    return new_doc, changes
