"""Render the prompt templates that drive every stage.

    python demos/03_prompt_templates.py
"""

from bundlegen import prompts

products = prompts.render_products(["Galaxy Tab 3 10.1", "Tab 3 Slim Case", "Screen Protector"])

print("=== bundle detection ===")
print(prompts.render("initial_bundles", {"products": products}))

print("\n=== intent generation ===")
print(prompts.render("initial_intents"))

print("\n=== bundle feedback (auto-supervision tips) ===")
tips = prompts.format_bundle_tips([("bundle 1", 4), ("bundle 2", 1)])
print(prompts.render("bundle_feedback", {"tips": tips}))

print("\n=== intent rating (two-rater protocol) ===")
intents = prompts.render_intent_pair("tablet protection setup", "tablet case shopping")
print(prompts.render("rater", {"products": products, "intents_block": intents}))

print("\n=== demonstration-guided target prompt ===")
print(prompts.render("target_inference", {"products": products}))
