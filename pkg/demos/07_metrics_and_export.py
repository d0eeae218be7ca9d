"""Session metrics, run-level evaluation, and the blinded human-eval export.

    python demos/07_metrics_and_export.py
"""

import tempfile
from pathlib import Path

from bundlegen.dataset import GroundTruth, GTBundle
from bundlegen.evaluate import HumanEvalCandidate, evaluate, export_human_eval, is_hit, jaccard
from bundlegen.infer import SessionResult

print("jaccard({1,2},{1,2,3}) =", jaccard(frozenset("ab"), frozenset("abc")))

# A predicted bundle is a hit when it has at least two items and is contained
# in some annotated bundle; singletons never count even when contained.
gts = [frozenset({"a", "b", "c"}), frozenset({"d", "e"})]
for pred in [{"a", "b"}, {"a", "d"}, {"d"}]:
    print(f"is_hit({sorted(pred)}) ->", is_hit(frozenset(pred), gts))

ground_truth = {
    "s1": GroundTruth("s1", (GTBundle(frozenset({"a", "b", "c"}), "first intent here"),
                             GTBundle(frozenset({"d", "e"}), "second intent here"))),
    "s2": GroundTruth("s2", (GTBundle(frozenset({"f", "g"}), "third intent here"),)),
}
results = [
    SessionResult("s1", (("a", "b"), ("d", "e"))),   # one partial hit, one exact
    SessionResult("s2", (("f", "g"), ("f", "x"))),   # one exact, one miss
]
report = evaluate(results, ground_truth)
print("\n" + report.table())
print("exact fractions:", report.to_dict()["precision_exact"],
      report.to_dict()["recall_exact"], report.to_dict()["coverage_exact"])

# The export samples hit bundles per domain, shuffles the competing intents,
# and hides which system wrote which option; the answer key is separate.
domains = {
    "electronic": [
        HumanEvalCandidate((f"gadget {i}", f"add-on {i}"),
                           {"ours": f"ours {i}", "zero_shot": f"zero {i}", "annotated": f"gold {i}"})
        for i in range(30)
    ],
}
with tempfile.TemporaryDirectory() as scratch:
    files = export_human_eval(domains, n_per_domain=5, out_dir=Path(scratch), seed=7, n_raters=1)
    for path in files:
        print(f"\n--- {path.name} ---")
        print(path.read_text()[:400])
