"""Prompt template registry with placeholder binding.

Templates live as data files under ``bundlegen/templates/``: the first line
is front matter naming the required placeholders ("placeholders: a, b"), the
rest is the body verbatim.  Curly quotes in source material are normalized to
straight quotes in the shipped templates, and the literal answer-format braces
are part of the body, so rendering substitutes only the four known
placeholder tokens and never interprets other braces.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

PLACEHOLDER_NAMES = ("products", "tips", "intents_block", "bundles_block")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    placeholders: tuple[str, ...]
    body: str


def _parse_template(template_id: str, text: str) -> PromptTemplate:
    first, _, body = text.partition("\n")
    if not first.startswith("placeholders:"):
        raise ValueError(f"template {template_id!r} missing front-matter line")
    names = tuple(
        name.strip() for name in first[len("placeholders:") :].split(",") if name.strip()
    )
    for name in names:
        if name not in PLACEHOLDER_NAMES:
            raise ValueError(f"template {template_id!r} declares unknown placeholder {name!r}")
    return PromptTemplate(template_id=template_id, placeholders=names, body=body.rstrip("\n"))


@lru_cache(maxsize=1)
def registry() -> dict[str, PromptTemplate]:
    templates: dict[str, PromptTemplate] = {}
    root = resources.files("bundlegen").joinpath("templates")
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            template_id = entry.name[: -len(".txt")]
            templates[template_id] = _parse_template(template_id, entry.read_text("utf-8"))
    return templates


def render(template_id: str, bindings: Mapping[str, str] | None = None) -> str:
    """Substitute all required placeholders; pure function of its inputs."""
    templates = registry()
    if template_id not in templates:
        raise KeyError(f"unknown template {template_id!r}")
    template = templates[template_id]
    bindings = bindings or {}
    text = template.body
    for name in template.placeholders:
        if name not in bindings:
            raise ValueError(f"template {template_id!r} requires binding {name!r}")
        value = bindings[name]
        if not value:
            raise ValueError(f"template {template_id!r} got an empty {name!r} binding")
        text = text.replace("{" + name + "}", value)
    for name in PLACEHOLDER_NAMES:
        if "{" + name + "}" in text:
            raise ValueError(f"template {template_id!r} left {name!r} unbound")
    return text


def render_products(titles: Sequence[str]) -> str:
    """Format a session's items as 1-based "product N: title" lines."""
    if not titles:
        raise ValueError("product list is empty")
    return "\n".join(f"product {i}: {title}" for i, title in enumerate(titles, start=1))


def render_intent_pair(candidate: str, reference: str) -> str:
    """The rater compares intent 1 (candidate) against intent 2 (reference)."""
    return f"intent 1: {candidate}\nintent 2: {reference}"


def format_bundle_tips(tips: Sequence[tuple[str, int]]) -> str:
    """E.g. [("bundle 1", 4), ("bundle 2", 1)] -> "[bundle 1 is Type 4, bundle 2 is Type 1]"."""
    if not tips:
        raise ValueError("no bundle tips to format")
    return "[" + ", ".join(f"{label} is Type {sig}" for label, sig in tips) + "]"


def format_intent_tips(tips: Sequence[tuple[str, Sequence[int]]]) -> str:
    """E.g. [("intent 1", [2, 3])] -> "regenerate intent 1 to [Type 2, Type 3]"."""
    if not tips:
        raise ValueError("no intent tips to format")
    parts = []
    for label, signals in tips:
        kinds = ", ".join(f"Type {s}" for s in signals)
        parts.append(f"regenerate {label} to [{kinds}]")
    return ", ".join(parts)
