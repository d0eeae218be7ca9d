from pathlib import Path

import pytest

from bundlegen import prompts

GOLDEN_DIR = Path(__file__).parent / "goldens"

PRODUCTS = prompts.render_products(["Galaxy Tab 3 10.1", "Tab 3 Slim Case"])
GOLDEN_BINDINGS = {
    "system": {},
    "initial_bundles": {"products": PRODUCTS},
    "initial_intents": {},
    "self_correct_bundles": {},
    "self_correct_intents": {},
    "bundle_feedback": {"tips": prompts.format_bundle_tips([("bundle 1", 4), ("bundle 2", 1)])},
    "intent_feedback": {"tips": prompts.format_intent_tips([("intent 1", [2, 3])])},
    "rules": {},
    "rater": {
        "products": PRODUCTS,
        "intents_block": prompts.render_intent_pair("tablet protection setup", "tablet case shopping"),
    },
    "target_inference": {"products": PRODUCTS},
    "reminder_bundles": {},
    "reminder_intents": {},
    "reminder_ratings": {},
}


def test_every_template_has_a_golden():
    assert set(GOLDEN_BINDINGS) == set(prompts.registry())


@pytest.mark.parametrize("template_id", sorted(GOLDEN_BINDINGS))
def test_rendered_template_matches_golden(template_id):
    rendered = prompts.render(template_id, GOLDEN_BINDINGS[template_id])
    golden = (GOLDEN_DIR / f"{template_id}.golden.txt").read_text("utf-8")
    assert rendered == golden


def test_initial_bundles_lists_both_products_and_answer_format():
    text = prompts.render("initial_bundles", {"products": PRODUCTS})
    assert "product 1: Galaxy Tab 3 10.1" in text
    assert "product 2: Tab 3 Slim Case" in text
    assert "The answer format is: {'bundle number':['product number']}. No explanation for the results." in text


def test_rater_prompt_carries_the_three_metric_scales():
    text = prompts.render("rater", GOLDEN_BINDINGS["rater"])
    for metric in ("Naturalness", "Coverage", "Motivation"):
        assert f"{metric}:" in text
    assert "1 - the intent is difficult to read and understand" in text
    assert "3 - most items in the bundle are covered by the intent" in text
    assert "2 - the intent contains motivational description" in text


def test_empty_product_list_is_rejected():
    with pytest.raises(ValueError, match="empty"):
        prompts.render_products([])


def test_missing_binding_and_unknown_template():
    with pytest.raises(ValueError, match="requires binding"):
        prompts.render("initial_bundles", {})
    with pytest.raises(KeyError, match="unknown template"):
        prompts.render("nope", {})


def test_render_is_pure():
    first = prompts.render("initial_bundles", {"products": PRODUCTS})
    second = prompts.render("initial_bundles", {"products": PRODUCTS})
    assert first == second


def test_no_placeholder_markers_survive_rendering():
    for template_id, bindings in GOLDEN_BINDINGS.items():
        text = prompts.render(template_id, bindings)
        for name in prompts.PLACEHOLDER_NAMES:
            assert "{" + name + "}" not in text


def test_product_numbering_is_one_based_session_order():
    text = prompts.render_products(["first", "second", "third"])
    assert text.splitlines() == ["product 1: first", "product 2: second", "product 3: third"]
