"""Ready-made mock scripts for offline runs and tests.

``perfect_oracle_script`` answers every bundle prompt with the session's
annotated bundles and every intent prompt with the annotated intents, so a
full pipeline run scores 1.0 on all metrics with zero feedback rounds.
``never_repair_script`` always returns the same defective answer, driving
every refinement loop to its round budget.

Session-specific rules key on the rendered product block, so sessions whose
item title sequences are identical cannot be told apart.  Targets in
few-shot mode share their prompt shape with the sampled example; for those
runs prefer hand-written scripts.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from . import prompts
from .dataset import GroundTruth, Item, Session
from .llm import MockRule, MockScript
from .parsing import format_bundle_answer, format_intent_answer

EQUAL_RATINGS = (
    "{'intent 1': ['Naturalness':3, 'Coverage':3, 'Motivation':2], "
    "'intent 2': ['Naturalness':3, 'Coverage':3, 'Motivation':2]}"
)
LOSING_RATINGS = (
    "{'intent 1': ['Naturalness':1, 'Coverage':1, 'Motivation':1], "
    "'intent 2': ['Naturalness':3, 'Coverage':3, 'Motivation':2]}"
)
GENERIC_RULES = (
    "1. Group products that serve one purpose together.\n"
    "2. A bundle always needs at least two products.\n"
    "3. Drop products unrelated to the bundle's purpose."
)


def _gt_answers(
    session: Session, gt: GroundTruth, catalog: Mapping[str, Item]
) -> tuple[str, str, str]:
    index_of: dict[str, int] = {}
    for position, item_id in enumerate(session.item_ids, start=1):
        index_of.setdefault(item_id, position)
    bundles = {
        f"bundle {n}": tuple(sorted(index_of[i] for i in b.items))
        for n, b in enumerate(gt.bundles, start=1)
    }
    intents = {f"bundle {n}": b.intent for n, b in enumerate(gt.bundles, start=1)}
    block = prompts.render_products([catalog[i].raw_title for i in session.item_ids])
    return format_bundle_answer(bundles), format_intent_answer(intents), block


def perfect_oracle_script(
    sessions: Iterable[Session],
    catalog: Mapping[str, Item],
    ground_truth: Mapping[str, GroundTruth],
) -> MockScript:
    """Script a mock that replies with the ground truth for every session."""
    demo_rules: list[MockRule] = []
    target_rules: list[MockRule] = []
    fallback_target_rules: list[MockRule] = []
    for session in sessions:
        gt = ground_truth.get(session.session_id)
        if gt is None or not gt.bundles:
            continue
        bundle_answer, intent_answer, block = _gt_answers(session, gt, catalog)
        in_descriptions = f"descriptions:\n{block}"  # initial-prompt rendering
        in_sequence = f"sequence:\n{block}"  # target-prompt rendering

        demo_rules += [
            MockRule(tag="initial_bundles", contains_last=in_descriptions, response=bundle_answer),
            MockRule(tag="self_correct_bundles", contains=in_descriptions, response=bundle_answer),
            MockRule(tag="bundle_feedback", contains=in_descriptions, response=bundle_answer),
            MockRule(tag="initial_intents", contains=in_descriptions, response=intent_answer),
            MockRule(tag="self_correct_intents", contains=in_descriptions, response=intent_answer),
            MockRule(tag="reinfer_intents", contains=in_descriptions, response=intent_answer),
            MockRule(tag="intent_feedback", contains=in_descriptions, response=intent_answer),
        ]
        # The guided target prompt renders the block after "sequence:"; rules
        # matching it must precede the zero-shot fallbacks, whose block also
        # appears inside any prepended demonstration transcript.
        target_rules += [
            MockRule(tag="target_bundles", contains_last=in_sequence, response=bundle_answer),
            MockRule(tag="target_intents", contains=in_sequence, response=intent_answer),
        ]
        fallback_target_rules += [
            MockRule(tag="target_bundles", contains_last=in_descriptions, response=bundle_answer),
            MockRule(tag="target_intents", contains=in_descriptions, response=intent_answer),
        ]

    static_rules = [
        MockRule(tag="rater_eval", response=EQUAL_RATINGS),
        MockRule(tag="rules", response=GENERIC_RULES),
    ]
    return MockScript(rules=target_rules + demo_rules + fallback_target_rules + static_rules)


def never_repair_script(
    *,
    bundle_answer: str = "{'bundle 1': ['product 1']}",
    intent_answer: str = "{'bundle 1': 'quick product pick'}",
) -> MockScript:
    """Script a mock that repeats one defective answer forever.

    The default bundle is a singleton, which can never classify as correct,
    and the rater always scores the candidate intent below the reference, so
    every loop runs for its full budget.
    """
    return MockScript(
        rules=[
            MockRule(tag="initial_bundles", response=bundle_answer),
            MockRule(tag="self_correct_bundles", response=bundle_answer),
            MockRule(tag="bundle_feedback", response=bundle_answer),
            MockRule(tag="target_bundles", response=bundle_answer),
            MockRule(tag="initial_intents", response=intent_answer),
            MockRule(tag="self_correct_intents", response=intent_answer),
            MockRule(tag="reinfer_intents", response=intent_answer),
            MockRule(tag="intent_feedback", response=intent_answer),
            MockRule(tag="target_intents", response=intent_answer),
            MockRule(tag="rater_eval", response=LOSING_RATINGS),
            MockRule(tag="rules", response=GENERIC_RULES),
        ]
    )
