"""Tolerant parsing of model answers into typed structures.

The canonical answer formats are::

    {'bundle 1': ['product 1', 'product 2'], 'bundle 2': ['product 3']}
    {'bundle 1': 'tablet protection setup'}
    {'intent 1': ['Naturalness':3, 'Coverage':2, 'Motivation':2]}

Parsers accept single or double quotes, arbitrary whitespace (including
newlines), "bundle 1"/"Bundle 1"/"1" label forms, and "product 3"/"3" item
forms.  Product indices outside [1, session_length] are dropped with a
recorded warning; bundles left empty are dropped.  Text with no recognizable
structure raises :class:`AnswerFormatError`; parsers never raise anything
else, no matter the input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import AnswerFormatError

# label -> ordered distinct 1-based product indices
BundleMap = dict[str, tuple[int, ...]]
# label -> intent text
IntentMap = dict[str, str]

_EMPTY_OBJECT = re.compile(r"\{\s*\}")
_TRAILING_INT = re.compile(r"(\d{1,9})\s*$")
_INT = re.compile(r"\d{1,12}")

# A key is a quoted chunk or a bare "word... 3" / "3" form; values differ per parser.
_KEY = r"""(?:['"](?P<qkey>[^'"]{0,80}?)['"]|(?P<bkey>[A-Za-z][A-Za-z ]{0,30}?\d{1,9}|\d{1,9}))"""
_BUNDLE_PAIR = re.compile(_KEY + r"""\s*:\s*(?P<value>\[[^\]\[]*\]|['"][^'"]*['"])""")
_INTENT_PAIR = re.compile(_KEY + r"""\s*:\s*(?P<value>['"][^'"]*['"])""")
_RATING_PAIR = re.compile(_KEY + r"""\s*:\s*(?P<value>\[[^\]\[]*\]|\{[^}{]*\})""")
_METRIC = {
    "naturalness": re.compile(r"(?i)naturalness['\"]?\s*[:=]\s*(-?\d{1,9}(?:\.\d+)?)"),
    "coverage": re.compile(r"(?i)coverage['\"]?\s*[:=]\s*(-?\d{1,9}(?:\.\d+)?)"),
    "motivation": re.compile(r"(?i)motivation['\"]?\s*[:=]\s*(-?\d{1,9}(?:\.\d+)?)"),
}
_RATING_SCALES = {"naturalness": (1, 3), "coverage": (1, 3), "motivation": (1, 2)}


@dataclass(frozen=True)
class RatingTriple:
    """Scores on the three intent metrics; fractional after averaging."""

    naturalness: float
    coverage: float
    motivation: float

    def __post_init__(self) -> None:
        for name, (lo, hi) in _RATING_SCALES.items():
            value = getattr(self, name)
            if not (lo <= value <= hi):
                raise AnswerFormatError(f"{name} score {value} outside [{lo}, {hi}]")

    def metric(self, name: str) -> float:
        return getattr(self, name)


def _label(match: re.Match, prefix: str) -> str:
    raw = match.group("qkey") if match.group("qkey") is not None else match.group("bkey")
    raw = (raw or "").strip()
    tail = _TRAILING_INT.search(raw)
    if tail:
        return f"{prefix} {int(tail.group(1))}"
    return raw.lower()


def parse_bundle_answer(text: str, session_length: int) -> tuple[BundleMap, list[str]]:
    """Extract labeled bundles of product indices from answer text.

    Returns the ordered bundle map and a list of warnings for indices that
    were dropped.  Raises :class:`AnswerFormatError` when no bundle structure
    is present at all (callers may re-prompt once with a format reminder).
    """
    try:
        bundles: BundleMap = {}
        warnings: list[str] = []
        structure_found = False
        for match in _BUNDLE_PAIR.finditer(text):
            label = _label(match, "bundle")
            if not label:
                continue
            structure_found = True
            value = match.group("value")
            inner = value[1:-1]
            elements = inner.split(",") if value.startswith("[") else [inner]
            indices: list[int] = []
            for element in elements:
                digits = _INT.search(element)
                if digits is None:
                    continue
                index = int(digits.group(0))
                if 1 <= index <= session_length:
                    if index not in indices:
                        indices.append(index)
                else:
                    warnings.append(f"{label}: product {index} out of range, dropped")
            if indices:
                bundles[label] = tuple(indices)
        if not structure_found and not _EMPTY_OBJECT.search(text):
            raise AnswerFormatError("no bundle structure found in answer")
        return bundles, warnings
    except AnswerFormatError:
        raise
    except Exception as exc:  # tolerant boundary: arbitrary text must not crash
        raise AnswerFormatError(f"unparseable bundle answer: {exc}") from exc


def parse_intent_answer(text: str) -> IntentMap:
    """Extract labeled intent strings. Empty intent text is an error."""
    try:
        intents: IntentMap = {}
        for match in _INTENT_PAIR.finditer(text):
            label = _label(match, "bundle")
            if not label:
                continue
            value = match.group("value")[1:-1].strip()
            if not value:
                raise AnswerFormatError(f"empty intent for {label}")
            intents[label] = " ".join(value.split())
        if not intents and not _EMPTY_OBJECT.search(text):
            raise AnswerFormatError("no intent structure found in answer")
        return intents
    except AnswerFormatError:
        raise
    except Exception as exc:
        raise AnswerFormatError(f"unparseable intent answer: {exc}") from exc


def parse_rating_answer(text: str) -> dict[str, RatingTriple]:
    """Extract per-intent rating triples.

    All three metrics must be present per intent; scores outside their scale
    ({1,2,3} for naturalness/coverage, {1,2} for motivation) are rejected,
    never clamped.
    """
    try:
        ratings: dict[str, RatingTriple] = {}
        for match in _RATING_PAIR.finditer(text):
            label = _label(match, "intent")
            if not label:
                continue
            chunk = match.group("value")
            scores: dict[str, float] = {}
            for name, pattern in _METRIC.items():
                found = pattern.search(chunk)
                if found is None:
                    raise AnswerFormatError(f"missing {name} score for {label}")
                value = float(found.group(1))
                lo, hi = _RATING_SCALES[name]
                if value != int(value) or not (lo <= value <= hi):
                    raise AnswerFormatError(
                        f"{name} score {found.group(1)} for {label} outside scale [{lo}, {hi}]"
                    )
                scores[name] = value
            ratings[label] = RatingTriple(**scores)
        if not ratings:
            raise AnswerFormatError("no rating structure found in answer")
        return ratings
    except AnswerFormatError:
        raise
    except Exception as exc:
        raise AnswerFormatError(f"unparseable rating answer: {exc}") from exc


def _quote(text: str) -> str:
    if "'" in text:
        return '"' + text.replace('"', "'") + '"'
    return f"'{text}'"


def format_bundle_answer(bundles: Mapping[str, Sequence[int]]) -> str:
    """Serialize to the canonical answer format (the round-trip inverse)."""
    pairs = []
    for label, indices in bundles.items():
        items = ", ".join(f"'product {i}'" for i in indices)
        pairs.append(f"{_quote(label)}: [{items}]")
    return "{" + ", ".join(pairs) + "}"


def format_intent_answer(intents: Mapping[str, str]) -> str:
    pairs = [f"{_quote(label)}: {_quote(intent)}" for label, intent in intents.items()]
    return "{" + ", ".join(pairs) + "}"


def format_rating_answer(ratings: Mapping[str, RatingTriple]) -> str:
    pairs = []
    for label, triple in ratings.items():
        pairs.append(
            f"{_quote(label)}: ['Naturalness':{int(triple.naturalness)}, "
            f"'Coverage':{int(triple.coverage)}, 'Motivation':{int(triple.motivation)}]"
        )
    return "{" + ", ".join(pairs) + "}"


def bundle_sets(bundles: Mapping[str, Sequence[int]]) -> set[frozenset[int]]:
    """Set-of-sets view used for fixed-point comparisons."""
    return {frozenset(indices) for indices in bundles.values()}
