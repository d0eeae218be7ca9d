"""Demonstration generation on neighbor sessions.

For one labeled neighbor session the builder runs: initial bundle + intent
generation, mutual self-correction, bundle auto-feedback against the ground
truth (five signal types), intent re-inference plus rater-driven intent
feedback (three signal types), and a final rules summarization.  The full
transcript, final answers, rules, and executed round counts form a
:class:`Demonstration`, which later guides inference on the target session.

Feedback signals are computed from ground truth exactly as defined: predicted
and ground-truth bundles are matched greedily by highest Jaccard similarity
(ties: lower predicted label, then lower ground-truth index), then each
predicted bundle is classified:

    1  exact match, keep
    2  no overlap with any ground-truth bundle, remove
    3  contains items outside its matched bundle, remove those
       (takes priority when items are both missing and extra)
    4  proper subset with more than one item, append the missing items
    5  singleton subset, grow to at least two items
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from . import prompts
from .dataset import GroundTruth, Item, Session
from .errors import AnswerFormatError, RatingError
from .llm import Conversation, LlmClient
from .parsing import (
    BundleMap,
    IntentMap,
    RatingTriple,
    bundle_sets,
    parse_bundle_answer,
    parse_intent_answer,
    parse_rating_answer,
)

logger = logging.getLogger(__name__)

SIGNAL_KEEP = 1
SIGNAL_INVALID = 2
SIGNAL_REMOVE_UNRELATED = 3
SIGNAL_APPEND_RELATED = 4
SIGNAL_EXPAND_SINGLETON = 5

INTENT_NATURALNESS = 1
INTENT_COVERAGE = 2
INTENT_MOTIVATION = 3

_METRIC_SIGNALS = (
    ("naturalness", INTENT_NATURALNESS),
    ("coverage", INTENT_COVERAGE),
    ("motivation", INTENT_MOTIVATION),
)


@dataclass(frozen=True)
class LoopConfig:
    """Maximum rounds for each refinement loop (defaults per the tuned setup)."""

    self_correct_rounds: int = 1
    bundle_feedback_rounds: int = 4
    intent_feedback_rounds: int = 1

    def __post_init__(self) -> None:
        for name in ("self_correct_rounds", "bundle_feedback_rounds", "intent_feedback_rounds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "self_correct_rounds": self.self_correct_rounds,
            "bundle_feedback_rounds": self.bundle_feedback_rounds,
            "intent_feedback_rounds": self.intent_feedback_rounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LoopConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class BundleSignal:
    label: str
    signal: int
    matched_gt: int | None  # index into the ground-truth bundle list


@dataclass(frozen=True)
class IntentSignal:
    label: str
    signal: int


@dataclass
class RaterPanel:
    """Two independent raters, each queried three times per comparison."""

    raters: tuple[LlmClient, ...]
    repetitions: int = 3

    def __post_init__(self) -> None:
        if len(self.raters) != 2:
            raise ValueError("the panel needs exactly two raters")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        a, b = (r.provider.config for r in self.raters)
        if a == b:
            logger.warning("both raters use the same backend; independent ones are recommended")


@dataclass
class Demonstration:
    session_id: str
    conversation: Conversation
    bundles: BundleMap
    intents: IntentMap
    rules: str
    self_correct_rounds: int
    bundle_feedback_rounds: int
    intent_feedback_rounds: int
    unresolved_intent_signals: tuple[IntentSignal, ...] = ()
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "conversation": self.conversation.to_dict(),
            "bundles": {label: list(indices) for label, indices in self.bundles.items()},
            "intents": dict(self.intents),
            "rules": self.rules,
            "rounds": {
                "self_correct": self.self_correct_rounds,
                "bundle_feedback": self.bundle_feedback_rounds,
                "intent_feedback": self.intent_feedback_rounds,
            },
            "unresolved_intent_signals": [
                {"label": s.label, "signal": s.signal} for s in self.unresolved_intent_signals
            ],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Demonstration":
        return cls(
            session_id=data["session_id"],
            conversation=Conversation.from_dict(data["conversation"]),
            bundles={label: tuple(v) for label, v in data["bundles"].items()},
            intents=dict(data["intents"]),
            rules=data["rules"],
            self_correct_rounds=data["rounds"]["self_correct"],
            bundle_feedback_rounds=data["rounds"]["bundle_feedback"],
            intent_feedback_rounds=data["rounds"]["intent_feedback"],
            unresolved_intent_signals=tuple(
                IntentSignal(s["label"], s["signal"]) for s in data["unresolved_intent_signals"]
            ),
            warnings=tuple(data.get("warnings", ())),
        )


def jaccard_indices(a: frozenset[int], b: frozenset[int]) -> float:
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def _label_sort_key(label: str, position: int) -> tuple:
    tail = re.search(r"(\d+)$", label)
    if tail:
        return (0, int(tail.group(1)), label)
    return (1, position, label)


def match_bundles(
    pred: Mapping[str, Sequence[int]], gt: Sequence[frozenset[int]]
) -> dict[str, int]:
    """Greedy one-to-one matching by highest positive Jaccard similarity.

    Ties prefer the lower predicted label, then the lower ground-truth index.
    Predicted bundles with no overlap against any ground-truth bundle stay
    unmatched.
    """
    label_keys = {
        label: _label_sort_key(label, position) for position, label in enumerate(pred)
    }
    candidates = []
    for label, indices in pred.items():
        pred_set = frozenset(indices)
        for gi, gt_set in enumerate(gt):
            score = jaccard_indices(pred_set, gt_set)
            if score > 0.0:
                candidates.append((-score, label_keys[label], gi, label))
    candidates.sort()
    matching: dict[str, int] = {}
    used_gt: set[int] = set()
    for _neg_score, _label_key, gi, label in candidates:
        if label in matching or gi in used_gt:
            continue
        matching[label] = gi
        used_gt.add(gi)
    return matching


def classify_bundle_signal(
    pred_bundle: frozenset[int], matched_gt: frozenset[int] | None
) -> int:
    """Classify one predicted bundle against its matched ground-truth bundle."""
    if matched_gt is None:
        return SIGNAL_INVALID
    if pred_bundle == matched_gt:
        return SIGNAL_KEEP
    if pred_bundle - matched_gt:
        return SIGNAL_REMOVE_UNRELATED
    if len(pred_bundle) == 1:
        return SIGNAL_EXPAND_SINGLETON
    return SIGNAL_APPEND_RELATED


def bundle_signals(
    pred: Mapping[str, Sequence[int]], gt: Sequence[frozenset[int]]
) -> list[BundleSignal]:
    matching = match_bundles(pred, gt)
    signals = []
    for label, indices in pred.items():
        gi = matching.get(label)
        matched = gt[gi] if gi is not None else None
        signals.append(
            BundleSignal(label=label, signal=classify_bundle_signal(frozenset(indices), matched), matched_gt=gi)
        )
    return signals


def rate_intent(
    panel: RaterPanel,
    bundle_titles: Sequence[str],
    candidate_intent: str,
    reference_intent: str,
    *,
    system_prompt: str | None = None,
    salt_prefix: str = "",
) -> dict[str, tuple[RatingTriple, RatingTriple]]:
    """Ask each rater to score candidate vs reference intent, three times each.

    Returns per-rater averaged (candidate, reference) triples, unrounded.
    A repetition whose answer cannot be parsed (after one format reminder) is
    dropped; fewer than two usable repetitions for a rater is an error.
    """
    prompt = prompts.render(
        "rater",
        {
            "products": prompts.render_products(bundle_titles),
            "intents_block": prompts.render_intent_pair(candidate_intent, reference_intent),
        },
    )
    results: dict[str, tuple[RatingTriple, RatingTriple]] = {}
    for rater_no, client in enumerate(panel.raters, start=1):
        samples: list[tuple[RatingTriple, RatingTriple]] = []
        for rep in range(1, panel.repetitions + 1):
            conversation = Conversation.new(system_prompt)
            salt = f"{salt_prefix}rater{rater_no}.rep{rep}"
            try:
                reply = client.send(conversation, prompt, "rater_eval", salt=salt)
                triples = _parse_rating_with_retry(client, conversation, reply, salt)
            except AnswerFormatError:
                continue
            samples.append(triples)
        if len(samples) < 2:
            raise RatingError(
                f"rater {rater_no}: only {len(samples)}/{panel.repetitions} repetitions parsed"
            )
        results[f"rater{rater_no}"] = (
            _average([s[0] for s in samples]),
            _average([s[1] for s in samples]),
        )
    return results


def _parse_rating_with_retry(
    client: LlmClient, conversation: Conversation, reply: str, salt: str
) -> tuple[RatingTriple, RatingTriple]:
    try:
        return _extract_pair(parse_rating_answer(reply))
    except AnswerFormatError:
        reminder = prompts.render("reminder_ratings")
        retry = client.send(conversation, reminder, "rater_eval_format_reminder", salt=salt)
        return _extract_pair(parse_rating_answer(retry))


def _extract_pair(ratings: Mapping[str, RatingTriple]) -> tuple[RatingTriple, RatingTriple]:
    if "intent 1" not in ratings or "intent 2" not in ratings:
        raise AnswerFormatError("rating answer must score both intent 1 and intent 2")
    return ratings["intent 1"], ratings["intent 2"]


def _average(triples: Sequence[RatingTriple]) -> RatingTriple:
    n = len(triples)
    return RatingTriple(
        naturalness=sum(t.naturalness for t in triples) / n,
        coverage=sum(t.coverage for t in triples) / n,
        motivation=sum(t.motivation for t in triples) / n,
    )


def _intent_label(bundle_label: str) -> str:
    tail = re.search(r"(\d+)$", bundle_label)
    if tail:
        return f"intent {tail.group(1)}"
    return bundle_label


@dataclass
class _DemoState:
    session: Session
    titles: list[str]
    conversation: Conversation
    bundles: BundleMap = field(default_factory=dict)
    intents: IntentMap = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class DemonstrationBuilder:
    """Runs the full refinement pipeline on neighbor sessions."""

    def __init__(
        self,
        generator: LlmClient,
        panel: RaterPanel,
        loops: LoopConfig | None = None,
        *,
        system_prompt: str | None = None,
    ):
        self.generator = generator
        self.panel = panel
        self.loops = loops or LoopConfig()
        self.system_prompt = (
            system_prompt if system_prompt is not None else prompts.render("system")
        )

    # -- prompt plumbing -----------------------------------------------------

    def _send_bundles(self, state: _DemoState, prompt: str, tag: str) -> None:
        reply = self.generator.send(state.conversation, prompt, tag)
        try:
            bundles, warns = parse_bundle_answer(reply, len(state.titles))
        except AnswerFormatError:
            reminder = prompts.render("reminder_bundles")
            reply = self.generator.send(state.conversation, reminder, f"{tag}_format_reminder")
            bundles, warns = parse_bundle_answer(reply, len(state.titles))
        state.bundles = bundles
        state.warnings.extend(warns)

    def _send_intents(self, state: _DemoState, prompt: str, tag: str) -> None:
        reply = self.generator.send(state.conversation, prompt, tag)
        try:
            state.intents = parse_intent_answer(reply)
        except AnswerFormatError:
            reminder = prompts.render("reminder_intents")
            reply = self.generator.send(state.conversation, reminder, f"{tag}_format_reminder")
            state.intents = parse_intent_answer(reply)

    # -- pipeline stages -----------------------------------------------------

    def generate_initial(self, state: _DemoState) -> None:
        products = prompts.render_products(state.titles)
        self._send_bundles(state, prompts.render("initial_bundles", {"products": products}), "initial_bundles")
        self._send_intents(state, prompts.render("initial_intents"), "initial_intents")

    def self_correct(self, state: _DemoState) -> int:
        """Alternate bundle adjustment and intent regeneration until the
        bundles stop changing or the round budget runs out."""
        rounds = 0
        for _ in range(self.loops.self_correct_rounds):
            previous_bundles = state.bundles
            self._send_bundles(state, prompts.render("self_correct_bundles"), "self_correct_bundles")
            rounds += 1
            if bundle_sets(state.bundles) == bundle_sets(previous_bundles):
                # No adjustment; keep the previous map so intent labels from
                # the earlier turn stay aligned even if labels were reshuffled.
                state.bundles = previous_bundles
                break
            self._send_intents(state, prompts.render("self_correct_intents"), "self_correct_intents")
        return rounds

    def bundle_feedback_loop(self, state: _DemoState, gt_sets: Sequence[frozenset[int]]) -> int:
        rounds = 0
        while rounds < self.loops.bundle_feedback_rounds:
            signals = bundle_signals(state.bundles, gt_sets)
            if all(s.signal == SIGNAL_KEEP for s in signals):
                break
            tips = prompts.format_bundle_tips([(s.label, s.signal) for s in signals])
            prompt = prompts.render("bundle_feedback", {"tips": tips})
            rounds += 1
            self._send_bundles(state, prompt, f"bundle_feedback_round_{rounds}")
        return rounds

    def reinfer_intents(self, state: _DemoState) -> None:
        self._send_intents(state, prompts.render("initial_intents"), "reinfer_intents")

    def intent_feedback_loop(
        self,
        state: _DemoState,
        gt_sets: Sequence[frozenset[int]],
        gt_intents: Sequence[str],
    ) -> tuple[int, tuple[IntentSignal, ...]]:
        """Rate intents against ground truth; re-prompt while any rater scores
        the candidate below the reference on any metric.  Signals emitted in
        the final round stay unverified when the budget runs out and are
        returned as unresolved."""
        rounds = 0
        unresolved: tuple[IntentSignal, ...] = ()
        while rounds < self.loops.intent_feedback_rounds:
            signals = self._collect_intent_signals(state, gt_sets, gt_intents, round_no=rounds + 1)
            if not signals:
                unresolved = ()
                break
            grouped: dict[str, list[int]] = {}
            for signal in signals:
                grouped.setdefault(signal.label, []).append(signal.signal)
            tips = prompts.format_intent_tips(
                [(_intent_label(label), sorted(kinds)) for label, kinds in grouped.items()]
            )
            prompt = prompts.render("intent_feedback", {"tips": tips})
            rounds += 1
            self._send_intents(state, prompt, f"intent_feedback_round_{rounds}")
            unresolved = tuple(signals)
        return rounds, unresolved

    def _collect_intent_signals(
        self,
        state: _DemoState,
        gt_sets: Sequence[frozenset[int]],
        gt_intents: Sequence[str],
        *,
        round_no: int,
    ) -> list[IntentSignal]:
        matching = match_bundles(state.bundles, gt_sets)
        signals: list[IntentSignal] = []
        for label, indices in state.bundles.items():
            gi = matching.get(label)
            if gi is None:
                continue  # no reference intent to compare against
            candidate = state.intents.get(label, "").strip()
            if not candidate:
                continue
            titles = [state.titles[i - 1] for i in sorted(set(indices))]
            ratings = rate_intent(
                self.panel,
                titles,
                candidate,
                gt_intents[gi],
                system_prompt=self.system_prompt,
                salt_prefix=f"{state.session.session_id}.{label}.round{round_no}.",
            )
            flagged: set[int] = set()
            for cand_avg, ref_avg in ratings.values():
                for metric, signal in _METRIC_SIGNALS:
                    if cand_avg.metric(metric) < ref_avg.metric(metric):
                        flagged.add(signal)
            for signal in sorted(flagged):
                signals.append(IntentSignal(label=label, signal=signal))
        return signals

    def summarize_rules(self, state: _DemoState) -> str:
        reply = self.generator.send(state.conversation, prompts.render("rules"), "rules")
        if not reply.strip():
            reply = self.generator.send(state.conversation, prompts.render("rules"), "rules_retry")
        if not reply.strip():
            raise AnswerFormatError("model returned an empty rules summary twice")
        return reply

    # -- entry point -----------------------------------------------------------

    def build(
        self,
        session: Session,
        gt: GroundTruth | None,
        catalog: Mapping[str, Item],
    ) -> Demonstration:
        if gt is None or not gt.bundles:
            raise ValueError(f"session {session.session_id!r} has no ground truth to learn from")

        index_of: dict[str, int] = {}
        for position, item_id in enumerate(session.item_ids, start=1):
            index_of.setdefault(item_id, position)
        gt_sets = [frozenset(index_of[i] for i in b.items) for b in gt.bundles]
        gt_intents = [b.intent for b in gt.bundles]

        state = _DemoState(
            session=session,
            titles=[catalog[i].raw_title for i in session.item_ids],
            conversation=Conversation.new(self.system_prompt),
        )
        self.generate_initial(state)
        sc_rounds = self.self_correct(state)
        bf_rounds = self.bundle_feedback_loop(state, gt_sets)
        self.reinfer_intents(state)
        if_rounds, unresolved = self.intent_feedback_loop(state, gt_sets, gt_intents)
        rules = self.summarize_rules(state)

        return Demonstration(
            session_id=session.session_id,
            conversation=state.conversation,
            bundles=state.bundles,
            intents=state.intents,
            rules=rules,
            self_correct_rounds=sc_rounds,
            bundle_feedback_rounds=bf_rounds,
            intent_feedback_rounds=if_rounds,
            unresolved_intent_signals=unresolved,
            warnings=tuple(state.warnings),
        )
