"""Bundle supervision signals: matching and classification against labels.

    python demos/04_feedback_signals.py
"""

from bundlegen.demo import bundle_signals, match_bundles

# Predicted bundles are 1-based product-index sets; the annotated bundles
# below contain {1,2,3} and {4,5}.
ground_truth = [frozenset({1, 2, 3}), frozenset({4, 5})]

cases = {
    "exact match":          {"bundle 1": (1, 2, 3)},
    "missing a product":    {"bundle 1": (1, 2)},
    "singleton":            {"bundle 1": (4,)},
    "unrelated extras":     {"bundle 1": (1, 2, 6)},
    "no overlap at all":    {"bundle 1": (7, 8)},
    "two bundles, one off": {"bundle 1": (1, 2, 3), "bundle 2": (4,)},
}

names = {1: "keep", 2: "invalid", 3: "remove unrelated", 4: "append related", 5: "expand singleton"}

for label, predicted in cases.items():
    matching = match_bundles(predicted, ground_truth)
    signals = bundle_signals(predicted, ground_truth)
    rendered = ", ".join(f"{s.label}: Type {s.signal} ({names[s.signal]})" for s in signals)
    print(f"{label:<22} matched={matching}  ->  {rendered}")
