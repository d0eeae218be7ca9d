"""Load the bundled demo dataset and split it chronologically.

Every capability demo is runnable from the repository root:

    python demos/01_dataset_and_split.py
"""

import bundlegen as bg

# The package ships a small fully labeled dataset: 12 sessions over 43 items,
# each session annotated with one or two bundles and their intents.
sessions, catalog, ground_truth = bg.load_dataset(bg.fixture_path())
print(f"{len(sessions)} sessions, {len(catalog)} items, "
      f"{sum(len(g.bundles) for g in ground_truth.values())} annotated bundles")

first = sessions[0]
print(f"\nfirst session {first.session_id} by {first.user_id}:")
for item_id in first.item_ids:
    print(f"  {item_id}: {catalog[item_id].raw_title}")
for bundle in ground_truth[first.session_id].bundles:
    print(f"  bundle {sorted(bundle.items)} -> {bundle.intent!r}")

# Sessions are ordered by timestamp and cut 7:1:2; the floor rule gives the
# first two splits their integer sizes and the remainder goes to test.
split = bg.chronological_split(sessions, (0.7, 0.1, 0.2),
                               catalog=catalog, ground_truth=ground_truth)
print(f"\ntrain={len(split.train)} validation={len(split.validation)} test={len(split.test)}")
print("train window :", split.train[0].timestamp, "..", split.train[-1].timestamp)
print("test window  :", split.test[0].timestamp, "..", split.test[-1].timestamp)
