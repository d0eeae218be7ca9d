"""Describe sessions, embed them, and rank nearest training neighbors.

    python demos/02_neighbor_retrieval.py
"""

import bundlegen as bg
from bundlegen.retrieval import (
    HashEmbedder,
    build_descriptions,
    embed_sessions,
    session_description,
    top_k_neighbors,
)

sessions, catalog, ground_truth = bg.load_dataset(bg.fixture_path())
split = bg.chronological_split(sessions, catalog=catalog, ground_truth=ground_truth)

# Item titles are lowercased, stripped of special characters, and cleared of
# stop words; a session is described by concatenating its items' tokens.
stopwords = bg.load_stopwords()
print("preprocess('Galaxy Tab 3 & Case!') ->", bg.preprocess_title("Galaxy Tab 3 & Case!", stopwords))

descriptions = build_descriptions(catalog, stopwords)
test_session = split.test[0]
print(f"\n{test_session.session_id} description:")
print(" ", session_description(test_session, descriptions).text)

# The deterministic feature-hash embedder keeps everything offline; swap in
# the HTTP embedding service via RemoteEmbedder for a real encoder.
embedder = HashEmbedder()
corpus = embed_sessions([session_description(s, descriptions) for s in split.train], embedder)
queries = embed_sessions([session_description(s, descriptions) for s in split.test], embedder)

print("\ntop-2 training neighbors per test session (cosine):")
for session, query in zip(split.test, queries):
    ranked = top_k_neighbors(query, corpus, k=2)
    listing = ", ".join(f"{sid} ({score:.3f})" for sid, score in ranked)
    print(f"  {session.session_id}: {listing}")
