"""Session descriptions, embeddings, and exact top-k cosine retrieval.

A session is described by concatenating the cleaned title tokens of its items
in order.  Descriptions are embedded by a pluggable provider; a deterministic
in-core feature-hash embedder ships as the default so the whole pipeline runs
offline.  Neighbor queries are exact cosine search over the training corpus.

Embedding cache file layout (append-only, little-endian):

    u16  provider id length        (utf-8 byte count)
    ...  provider id bytes
    32B  sha256 of the description text (utf-8)
    u32  vector dimension
    ...  dimension * float64 components
"""

from __future__ import annotations

import hashlib
import json
import struct
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .dataset import Item, Session
from .errors import RetrievalError

HASH_EMBEDDER_DIM = 384
_CLEAN_KEEP = set("abcdefghijklmnopqrstuvwxyz0123456789 ")


@dataclass(frozen=True)
class ItemDescription:
    item_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class SessionDescription:
    session_id: str
    text: str


@dataclass(frozen=True)
class SessionEmbedding:
    session_id: str
    vector: np.ndarray
    dim: int


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 1
    provider: str = "hash"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise RetrievalError("k must be >= 1")


def _clean(text: str) -> str:
    lowered = text.lower()
    return "".join(ch for ch in lowered if ch in _CLEAN_KEEP)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Load a stop-word list, normalized through the same character filter
    used on titles so contractions like "don't" match their cleaned form."""
    if path is None:
        text = resources.files("bundlegen").joinpath("data/stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = set()
    for line in text.splitlines():
        cleaned = _clean(line.strip())
        if cleaned:
            words.add(cleaned)
    return frozenset(words)


def preprocess_title(raw_title: str, stopwords: frozenset[str]) -> tuple[str, ...]:
    """Lowercase, drop characters outside [a-z0-9 ], tokenize, drop stop words.

    Order is preserved and the result may be empty.
    """
    tokens = _clean(raw_title).split()
    return tuple(t for t in tokens if t not in stopwords)


def build_descriptions(
    catalog: Mapping[str, Item], stopwords: frozenset[str]
) -> dict[str, ItemDescription]:
    return {
        item_id: ItemDescription(item_id=item_id, tokens=preprocess_title(item.raw_title, stopwords))
        for item_id, item in catalog.items()
    }


def session_description(
    session: Session, descriptions: Mapping[str, ItemDescription]
) -> SessionDescription:
    """Concatenate item token sequences in session order (repeats included)."""
    parts: list[str] = []
    for item_id in session.item_ids:
        if item_id not in descriptions:
            raise RetrievalError(
                f"session {session.session_id!r} references unknown item {item_id!r}"
            )
        parts.extend(descriptions[item_id].tokens)
    return SessionDescription(session_id=session.session_id, text=" ".join(parts))


class EmbeddingProvider(Protocol):
    provider_id: str

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class HashEmbedder:
    """Deterministic fallback embedder: feature-hash token counts, L2-normalized.

    Each whitespace token is bucketed by the first 8 bytes of its sha256
    digest (big-endian, modulo the dimension).  An empty text embeds to the
    zero vector, which the cosine rules treat as similarity 0.
    """

    def __init__(self, dim: int = HASH_EMBEDDER_DIM):
        if dim < 1:
            raise RetrievalError("dim must be >= 1")
        self.dim = dim
        self.provider_id = f"feature-hash-v1-{dim}"

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for token in text.split():
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                idx = int.from_bytes(digest[:8], "big") % self.dim
                vec[idx] += 1.0
            norm = float(np.linalg.norm(vec))
            if norm > 0.0:
                vec /= norm
            out.append(vec.tolist())
        return out


class RemoteEmbedder:
    """Client for the embedding HTTP service (POST {base}/embed)."""

    MAX_BATCH = 256

    def __init__(self, base_url: str, *, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.provider_id = f"remote:{self.base_url}"

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors: list[list[float]] = []
        for start in range(0, len(texts), self.MAX_BATCH):
            chunk = list(texts[start : start + self.MAX_BATCH])
            payload = json.dumps({"texts": chunk}).encode("utf-8")
            request = urllib.request.Request(
                f"{self.base_url}/embed",
                data=payload,
                headers={"Content-Type": "application/json"},
                method="POST",
            )
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    body = json.loads(response.read().decode("utf-8"))
            except Exception as exc:
                raise RetrievalError(f"embedding service request failed: {exc}") from exc
            batch = body.get("embeddings")
            if not isinstance(batch, list) or len(batch) != len(chunk):
                raise RetrievalError("embedding service returned a malformed batch")
            vectors.extend(batch)
        return vectors


def _text_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


class EmbeddingCache:
    """Append-only on-disk cache keyed by (provider id, text hash)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[tuple[str, bytes], np.ndarray] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        data = self.path.read_bytes()
        offset = 0
        try:
            while offset < len(data):
                (pid_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                provider_id = data[offset : offset + pid_len].decode("utf-8")
                offset += pid_len
                digest = data[offset : offset + 32]
                offset += 32
                (dim,) = struct.unpack_from("<I", data, offset)
                offset += 4
                vector = np.frombuffer(data, dtype="<f8", count=dim, offset=offset).copy()
                offset += dim * 8
                self._entries[(provider_id, digest)] = vector
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise RetrievalError(
                f"embedding cache {self.path} is corrupt at byte {offset}: {exc}"
            ) from exc

    def get(self, provider_id: str, text: str) -> np.ndarray | None:
        return self._entries.get((provider_id, _text_hash(text)))

    def put(self, provider_id: str, text: str, vector: np.ndarray) -> None:
        digest = _text_hash(text)
        key = (provider_id, digest)
        if key in self._entries:
            return
        vector = np.asarray(vector, dtype=np.float64)
        self._entries[key] = vector
        pid = provider_id.encode("utf-8")
        with self.path.open("ab") as handle:
            handle.write(struct.pack("<H", len(pid)))
            handle.write(pid)
            handle.write(digest)
            handle.write(struct.pack("<I", vector.size))
            handle.write(vector.astype("<f8").tobytes())

    def __len__(self) -> int:
        return len(self._entries)


def embed_sessions(
    descriptions: Sequence[SessionDescription],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[SessionEmbedding]:
    """Embed descriptions in order, consulting and filling the cache.

    All vectors in the batch must share one dimension and be finite.
    """
    vectors: dict[int, np.ndarray] = {}
    missing: list[int] = []
    for i, desc in enumerate(descriptions):
        hit = cache.get(provider.provider_id, desc.text) if cache is not None else None
        if hit is not None:
            vectors[i] = hit
        else:
            missing.append(i)

    if missing:
        fresh = provider.embed([descriptions[i].text for i in missing])
        if len(fresh) != len(missing):
            raise RetrievalError("provider returned a different number of vectors than requested")
        for i, raw in zip(missing, fresh):
            vec = np.asarray(raw, dtype=np.float64)
            vectors[i] = vec
            if cache is not None:
                cache.put(provider.provider_id, descriptions[i].text, vec)

    dims = {vectors[i].size for i in range(len(descriptions))}
    if len(dims) > 1:
        raise RetrievalError(f"dimension mismatch across batch: {sorted(dims)}")
    out = []
    for i, desc in enumerate(descriptions):
        vec = vectors[i]
        if not np.all(np.isfinite(vec)):
            raise RetrievalError(f"non-finite embedding for session {desc.session_id!r}")
        out.append(SessionEmbedding(session_id=desc.session_id, vector=vec, dim=int(vec.size)))
    return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with the zero-vector case pinned to 0."""
    if a.shape != b.shape:
        raise RetrievalError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(np.dot(a, b) / (norm_a * norm_b))


def top_k_neighbors(
    query: SessionEmbedding,
    corpus: Sequence[SessionEmbedding],
    k: int,
) -> list[tuple[str, float]]:
    """Exact top-k by cosine, descending, ties broken by session_id ascending.

    Returns exactly min(k, len(corpus)) entries.  The caller is responsible
    for excluding the query's own session from the corpus.
    """
    if not corpus:
        raise RetrievalError("corpus is empty")
    if k < 1:
        raise RetrievalError("k must be >= 1")
    dims = {e.dim for e in corpus} | {query.dim}
    if len(dims) > 1:
        raise RetrievalError(f"dimension mismatch: {sorted(dims)}")

    matrix = np.stack([e.vector for e in corpus])
    norms = np.linalg.norm(matrix, axis=1)
    qnorm = float(np.linalg.norm(query.vector))
    scores = np.zeros(len(corpus), dtype=np.float64)
    if qnorm > 0.0:
        nonzero = norms > 0.0
        scores[nonzero] = (matrix[nonzero] @ query.vector) / (norms[nonzero] * qnorm)

    ranked = sorted(
        ((corpus[i].session_id, float(scores[i])) for i in range(len(corpus))),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[: min(k, len(corpus))]


def build_session_embeddings(
    sessions: Iterable[Session],
    catalog: Mapping[str, Item],
    provider: EmbeddingProvider,
    *,
    stopwords: frozenset[str] | None = None,
    cache: EmbeddingCache | None = None,
) -> list[SessionEmbedding]:
    """Convenience pipeline: descriptions -> embeddings for a set of sessions."""
    stopwords = stopwords if stopwords is not None else load_stopwords()
    descriptions = build_descriptions(catalog, stopwords)
    session_texts = [session_description(s, descriptions) for s in sessions]
    return embed_sessions(session_texts, provider, cache)
