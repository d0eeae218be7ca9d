"""Demonstration-guided inference on target sessions.

The neighbor demonstrations' transcripts (optionally filtered by ablation
flags) are prepended as conversational context, then the target session gets
the bundle-detection prompt followed by the intent prompt.  Zero-shot uses no
context and the plain task prompt; few-shot uses an idealized transcript of a
sampled example instead of a refined demonstration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import prompts
from .dataset import GroundTruth, Item, Session
from .demo import Demonstration
from .errors import AnswerFormatError
from .llm import Conversation, LlmClient, Message
from .parsing import (
    format_bundle_answer,
    format_intent_answer,
    parse_bundle_answer,
    parse_intent_answer,
)

MODES = ("dicl", "few_shot_random", "zero_shot")


@dataclass(frozen=True)
class InferenceMode:
    """Inference configuration, including the ablation flags.

    ``zero_shot`` ignores ``k`` and all flags; the full setup keeps every
    flag on.  Flags only remove turns from the demonstration context, never
    rewrite the remaining ones.
    """

    mode: str = "dicl"
    k: int = 1
    use_self_correct: bool = True
    use_auto_feedback: bool = True
    use_rules: bool = True
    use_intents_in_demo: bool = True
    use_top_neighbor: bool = True

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "k": self.k,
            "use_self_correct": self.use_self_correct,
            "use_auto_feedback": self.use_auto_feedback,
            "use_rules": self.use_rules,
            "use_intents_in_demo": self.use_intents_in_demo,
            "use_top_neighbor": self.use_top_neighbor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceMode":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass
class SessionResult:
    """Predictions for one target session, with indices resolved to item ids."""

    session_id: str
    bundles: tuple[tuple[str, ...], ...]
    intents: dict[int, str] = field(default_factory=dict)
    source_demonstrations: tuple[str, ...] = ()
    failed: bool = False
    warnings: tuple[str, ...] = ()

    def bundle_sets(self) -> list[frozenset[str]]:
        return [frozenset(items) for items in self.bundles]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "bundles": [
                {"items": list(items), "singleton": len(set(items)) == 1} for items in self.bundles
            ],
            "intents": {str(position): text for position, text in self.intents.items()},
            "source_demonstrations": list(self.source_demonstrations),
            "failed": self.failed,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionResult":
        return cls(
            session_id=data["session_id"],
            bundles=tuple(tuple(b["items"]) for b in data["bundles"]),
            intents={int(position): text for position, text in data["intents"].items()},
            source_demonstrations=tuple(data.get("source_demonstrations", ())),
            failed=data.get("failed", False),
            warnings=tuple(data.get("warnings", ())),
        )


def _dropped_tag_prefixes(mode: InferenceMode) -> tuple[str, ...]:
    dropped: list[str] = []
    if not mode.use_self_correct:
        dropped += ["self_correct_bundles", "self_correct_intents"]
    if not mode.use_auto_feedback:
        dropped += ["bundle_feedback_round", "reinfer_intents", "intent_feedback_round"]
    if not mode.use_intents_in_demo:
        dropped += ["initial_intents", "self_correct_intents", "reinfer_intents", "intent_feedback_round"]
    if not mode.use_rules:
        dropped += ["rules"]
    return tuple(dropped)


def _exchange_pairs(conversation: Conversation) -> list[tuple[str, Message, Message]]:
    body = [m for m in conversation.messages if m.role != "system"]
    pairs = []
    for i in range(0, len(body) - 1, 2):
        tag = conversation.tags[i // 2] if i // 2 < len(conversation.tags) else ""
        pairs.append((tag, body[i], body[i + 1]))
    return pairs


def assemble_context(
    demonstrations: Sequence[Demonstration], mode: InferenceMode
) -> Conversation:
    """Build the conversation prefix shown before the target prompts.

    Demonstrations must already be ordered by neighbor rank; their system
    messages are dropped (the inference conversation provides its own) and
    turns are filtered per the ablation flags.
    """
    prefix = Conversation()
    if mode.mode == "zero_shot":
        return prefix
    if not demonstrations:
        raise ValueError(f"{mode.mode} inference needs at least one demonstration")
    dropped = _dropped_tag_prefixes(mode)
    for demonstration in demonstrations:
        for tag, user, assistant in _exchange_pairs(demonstration.conversation):
            if any(tag.startswith(prefix_) for prefix_ in dropped):
                continue
            prefix.messages.append(user)
            prefix.messages.append(assistant)
            prefix.tags.append(tag)
    return prefix


def build_ideal_transcript(
    session: Session, gt: GroundTruth, catalog: Mapping[str, Item]
) -> Demonstration:
    """Few-shot demonstration: the example session answered straight from its
    annotations, rendered in the canonical answer format."""
    if not gt.bundles:
        raise ValueError(f"session {session.session_id!r} has no ground truth")
    index_of: dict[str, int] = {}
    for position, item_id in enumerate(session.item_ids, start=1):
        index_of.setdefault(item_id, position)
    bundles = {
        f"bundle {n}": tuple(sorted(index_of[i] for i in b.items))
        for n, b in enumerate(gt.bundles, start=1)
    }
    intents = {f"bundle {n}": b.intent for n, b in enumerate(gt.bundles, start=1)}

    titles = [catalog[i].raw_title for i in session.item_ids]
    conversation = Conversation()
    conversation.messages += [
        Message("user", prompts.render("initial_bundles", {"products": prompts.render_products(titles)})),
        Message("assistant", format_bundle_answer(bundles)),
        Message("user", prompts.render("initial_intents")),
        Message("assistant", format_intent_answer(intents)),
    ]
    conversation.tags += ["initial_bundles", "initial_intents"]
    return Demonstration(
        session_id=session.session_id,
        conversation=conversation,
        bundles=bundles,
        intents=intents,
        rules="(example answered from its annotations)",
        self_correct_rounds=0,
        bundle_feedback_rounds=0,
        intent_feedback_rounds=0,
    )


def infer_target(
    session: Session,
    context: Conversation,
    client: LlmClient,
    mode: InferenceMode,
    catalog: Mapping[str, Item],
    *,
    source_demonstrations: Sequence[str] = (),
    system_prompt: str | None = None,
) -> SessionResult:
    """Run both tasks on the target session.

    A bundle answer that stays unparseable after one format reminder marks
    the session as failed with empty predictions; the intent prompt is sent
    regardless so every transcript has the same shape, and its reply is
    discarded when there are no bundles to attach intents to.
    """
    system = system_prompt if system_prompt is not None else prompts.render("system")
    conversation = Conversation.new(system)
    conversation.messages.extend(context.messages)
    conversation.tags.extend(context.tags)

    titles = [catalog[i].raw_title for i in session.item_ids]
    products = prompts.render_products(titles)
    template = "target_inference" if mode.mode == "dicl" else "initial_bundles"
    bundle_prompt = prompts.render(template, {"products": products})

    warnings: list[str] = []
    failed = False
    bundles: dict[str, tuple[int, ...]] = {}
    reply = client.send(conversation, bundle_prompt, "target_bundles")
    try:
        bundles, warns = parse_bundle_answer(reply, len(titles))
        warnings.extend(warns)
    except AnswerFormatError:
        reminder = prompts.render("reminder_bundles")
        reply = client.send(conversation, reminder, "target_bundles_format_reminder")
        try:
            bundles, warns = parse_bundle_answer(reply, len(titles))
            warnings.extend(warns)
        except AnswerFormatError as exc:
            failed = True
            warnings.append(f"bundle answer unparseable: {exc}")

    intent_map: dict[str, str] = {}
    intent_reply = client.send(conversation, prompts.render("initial_intents"), "target_intents")
    if bundles:
        try:
            intent_map = parse_intent_answer(intent_reply)
        except AnswerFormatError as exc:
            warnings.append(f"intent answer unparseable: {exc}")

    resolved: list[tuple[str, ...]] = []
    intents: dict[int, str] = {}
    for position, (label, indices) in enumerate(bundles.items(), start=1):
        item_ids: list[str] = []
        for index in indices:
            item_id = session.item_ids[index - 1]
            if item_id not in item_ids:
                item_ids.append(item_id)
        resolved.append(tuple(item_ids))
        text = intent_map.get(label, "").strip()
        if text:
            intents[position] = text

    return SessionResult(
        session_id=session.session_id,
        bundles=tuple(resolved),
        intents=intents,
        source_demonstrations=tuple(source_demonstrations),
        failed=failed,
        warnings=tuple(warnings),
    )
