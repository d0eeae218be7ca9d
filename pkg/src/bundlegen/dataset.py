"""Session/bundle dataset loading, validation, and chronological splitting.

Canonical file format (UTF-8, one JSON record per line):

    {"kind": "item", "item_id": "...", "title": "..."}
    {"kind": "session", "session_id": "...", "user_id": "...",
     "timestamp": 123, "items": ["...", ...],
     "bundles": [{"items": ["...", ...], "intent": "..."}]}

``bundles`` may be absent or empty for unlabeled sessions.  Item records may
appear anywhere in the file; referential integrity is checked after the whole
file is read.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DatasetError

RATIO_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Item:
    """A catalog product. ``description`` is filled by the retrieval step."""

    item_id: str
    raw_title: str
    description: tuple[str, ...] = ()


@dataclass(frozen=True)
class Session:
    """An ordered sequence of item interactions from one user visit."""

    session_id: str
    user_id: str
    timestamp: int
    item_ids: tuple[str, ...]


@dataclass(frozen=True)
class GTBundle:
    """One annotated bundle: a set of >= 2 items plus its intent text."""

    items: frozenset[str]
    intent: str


@dataclass(frozen=True)
class GroundTruth:
    session_id: str
    bundles: tuple[GTBundle, ...]


@dataclass(frozen=True)
class SplitDataset:
    """Chronological train/validation/test partition plus shared lookups."""

    train: tuple[Session, ...]
    validation: tuple[Session, ...]
    test: tuple[Session, ...]
    catalog: Mapping[str, Item]
    ground_truth: Mapping[str, GroundTruth]

    def split_of(self, name: str) -> tuple[Session, ...]:
        try:
            return {"train": self.train, "validation": self.validation, "test": self.test}[name]
        except KeyError:
            raise KeyError(f"unknown split {name!r}") from None


def _record_error(line_no: int, message: str) -> DatasetError:
    return DatasetError(f"line {line_no}: {message}")


def _require(record: dict, key: str, line_no: int):
    if key not in record:
        raise _record_error(line_no, f"missing field {key!r}")
    return record[key]


def load_dataset(path: str | Path) -> tuple[list[Session], dict[str, Item], dict[str, GroundTruth]]:
    """Read the canonical line-delimited format and validate it.

    Returns sessions in file order, the item catalog, and per-session ground
    truth (only for sessions that carry bundles).  Raises
    :class:`DatasetError` on the first malformed record, dangling item
    reference, duplicate id, undersized bundle, or empty intent.
    """
    path = Path(path)
    sessions: list[Session] = []
    catalog: dict[str, Item] = {}
    ground_truth: dict[str, GroundTruth] = {}
    seen_sessions: set[str] = set()

    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _record_error(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise _record_error(line_no, "record is not an object")

            kind = record.get("kind")
            if kind == "item":
                item_id = str(_require(record, "item_id", line_no))
                title = str(_require(record, "title", line_no))
                if not title:
                    raise _record_error(line_no, f"item {item_id!r} has an empty title")
                if item_id in catalog:
                    raise _record_error(line_no, f"duplicate item_id {item_id!r}")
                catalog[item_id] = Item(item_id=item_id, raw_title=title)
            elif kind == "session":
                session_id = str(_require(record, "session_id", line_no))
                if session_id in seen_sessions:
                    raise _record_error(line_no, f"duplicate session_id {session_id!r}")
                seen_sessions.add(session_id)
                user_id = str(_require(record, "user_id", line_no))
                timestamp = _require(record, "timestamp", line_no)
                if not isinstance(timestamp, int):
                    raise _record_error(line_no, "timestamp must be an integer")
                items = _require(record, "items", line_no)
                if not isinstance(items, list) or not items:
                    raise _record_error(line_no, "items must be a non-empty list")
                item_ids = tuple(str(i) for i in items)
                sessions.append(
                    Session(session_id=session_id, user_id=user_id, timestamp=timestamp, item_ids=item_ids)
                )
                bundles_raw = record.get("bundles") or []
                if bundles_raw:
                    bundles = []
                    for b in bundles_raw:
                        if not isinstance(b, dict) or "items" not in b or "intent" not in b:
                            raise _record_error(line_no, "bundle needs 'items' and 'intent'")
                        bundle_items = frozenset(str(i) for i in b["items"])
                        if len(bundle_items) < 2:
                            raise _record_error(
                                line_no,
                                f"bundle {sorted(bundle_items)} in session {session_id!r} "
                                "has fewer than 2 distinct items",
                            )
                        if not bundle_items <= set(item_ids):
                            extra = sorted(bundle_items - set(item_ids))
                            raise _record_error(
                                line_no,
                                f"bundle items {extra} not in session {session_id!r}",
                            )
                        intent = str(b["intent"]).strip()
                        if not intent:
                            raise _record_error(line_no, f"empty intent in session {session_id!r}")
                        bundles.append(GTBundle(items=bundle_items, intent=intent))
                    ground_truth[session_id] = GroundTruth(session_id=session_id, bundles=tuple(bundles))
            else:
                raise _record_error(line_no, f"unknown record kind {kind!r}")

    for session in sessions:
        for item_id in session.item_ids:
            if item_id not in catalog:
                raise DatasetError(
                    f"session {session.session_id!r} references unknown item {item_id!r}"
                )
    return sessions, catalog, ground_truth


def save_dataset(
    path: str | Path,
    sessions: Iterable[Session],
    catalog: Mapping[str, Item],
    ground_truth: Mapping[str, GroundTruth],
) -> None:
    """Write the canonical format so that load(save(x)) == x.

    Items are written first (sorted by id), then sessions in the given order.
    Bundle item sets are serialized sorted for byte stability.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for item_id in sorted(catalog):
            item = catalog[item_id]
            handle.write(
                json.dumps({"kind": "item", "item_id": item.item_id, "title": item.raw_title}) + "\n"
            )
        for session in sessions:
            record: dict = {
                "kind": "session",
                "session_id": session.session_id,
                "user_id": session.user_id,
                "timestamp": session.timestamp,
                "items": list(session.item_ids),
            }
            gt = ground_truth.get(session.session_id)
            if gt is not None:
                record["bundles"] = [
                    {"items": sorted(b.items), "intent": b.intent} for b in gt.bundles
                ]
            handle.write(json.dumps(record) + "\n")


def chronological_split(
    sessions: Sequence[Session],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    *,
    catalog: Mapping[str, Item] | None = None,
    ground_truth: Mapping[str, GroundTruth] | None = None,
) -> SplitDataset:
    """Split sessions by time: floor(r0*n) train, floor(r1*n) validation, rest test.

    Sessions are ordered by (timestamp, session_id) before slicing, so equal
    timestamps fall back to session_id order.  A tiny epsilon is added before
    flooring so decimal ratios like 0.7 behave as written rather than as their
    binary approximations.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DatasetError("ratios must be three positive fractions")
    if abs(sum(ratios) - 1.0) > RATIO_TOLERANCE:
        raise DatasetError(f"ratios must sum to 1, got {sum(ratios)!r}")
    if len(sessions) < 3:
        raise DatasetError("need at least 3 sessions to split")

    ordered = sorted(sessions, key=lambda s: (s.timestamp, s.session_id))
    n = len(ordered)
    n_train = math.floor(n * ratios[0] + RATIO_TOLERANCE)
    n_val = math.floor(n * ratios[1] + RATIO_TOLERANCE)
    return SplitDataset(
        train=tuple(ordered[:n_train]),
        validation=tuple(ordered[n_train : n_train + n_val]),
        test=tuple(ordered[n_train + n_val :]),
        catalog=dict(catalog) if catalog else {},
        ground_truth=dict(ground_truth) if ground_truth else {},
    )


def fixture_path() -> Path:
    """Path of the bundled 12-session demo dataset."""
    return Path(str(resources.files("bundlegen").joinpath("data/fixture_sessions.jsonl")))
