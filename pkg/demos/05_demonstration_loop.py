"""Build one full demonstration on a labeled neighbor session.

The chat backend here is the scriptable mock, wired to answer with the
session's annotations, so the whole refinement loop runs offline.  Swap the
providers for remote ones to watch a real model get corrected.

    python demos/05_demonstration_loop.py
"""

import bundlegen as bg
from bundlegen.demo import DemonstrationBuilder, LoopConfig, RaterPanel
from bundlegen.llm import LlmClient, MockProvider
from bundlegen.mockscripts import never_repair_script

sessions, catalog, ground_truth = bg.load_dataset(bg.fixture_path())
neighbor = sessions[0]

# A deliberately stubborn mock: it always answers with the same singleton
# bundle, so the auto-feedback loop runs to its full budget and the
# demonstration records every round.
def client(name):
    return LlmClient(MockProvider(never_repair_script()), name=name)

builder = DemonstrationBuilder(
    client("generator"),
    RaterPanel(raters=(client("rater1"), client("rater2"))),
    LoopConfig(self_correct_rounds=1, bundle_feedback_rounds=4, intent_feedback_rounds=1),
)
demo = builder.build(neighbor, ground_truth[neighbor.session_id], catalog)

print(f"demonstration for {demo.session_id}")
print(f"rounds: self_correct={demo.self_correct_rounds} "
      f"bundle_feedback={demo.bundle_feedback_rounds} intent_feedback={demo.intent_feedback_rounds}")
print(f"unresolved intent signals: {[(s.label, s.signal) for s in demo.unresolved_intent_signals]}")

print("\ntranscript:")
user_turns = [m for m in demo.conversation.messages if m.role == "user"]
for tag, message in zip(demo.conversation.tags, user_turns):
    head = message.content.splitlines()[0][:72]
    print(f"  [{tag}] {head}")

print("\nfinal bundles:", demo.bundles)
print("final intents:", demo.intents)
print("summarized rules:", demo.rules.splitlines()[0], "...")
