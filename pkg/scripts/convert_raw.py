#!/usr/bin/env python3
"""Convert tabular session exports into the canonical dataset format.

Expected inputs:

  --interactions  TSV with header: session_id, user_id, timestamp, item_id, title
                  (one row per interaction, rows of one session in click order)
  --bundles       optional TSV with header: session_id, item_ids, intent
                  (item_ids is a comma-separated list inside the session)

Writes the line-delimited JSON format consumed by ``bundlegen ingest``:
item records first, then one session record per session with its annotated
bundles attached.

    python scripts/convert_raw.py --interactions raw.tsv --bundles labels.tsv \
        --out dataset.jsonl
"""

import argparse
import csv
import json
import sys
from collections import defaultdict
from pathlib import Path


def read_interactions(path: Path):
    items: dict[str, str] = {}
    sessions: dict[str, dict] = {}
    order: list[str] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        required = {"session_id", "user_id", "timestamp", "item_id", "title"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            sys.exit(f"interactions file lacks columns: {sorted(missing)}")
        for row in reader:
            sid = row["session_id"]
            if sid not in sessions:
                sessions[sid] = {
                    "user_id": row["user_id"],
                    "timestamp": int(row["timestamp"]),
                    "items": [],
                }
                order.append(sid)
            sessions[sid]["items"].append(row["item_id"])
            items.setdefault(row["item_id"], row["title"])
    return items, sessions, order


def read_bundles(path: Path):
    bundles = defaultdict(list)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        for row in reader:
            bundles[row["session_id"]].append(
                {"items": [i.strip() for i in row["item_ids"].split(",") if i.strip()],
                 "intent": row["intent"].strip()}
            )
    return bundles


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--interactions", type=Path, required=True)
    parser.add_argument("--bundles", type=Path)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()

    items, sessions, order = read_interactions(args.interactions)
    bundles = read_bundles(args.bundles) if args.bundles else {}

    with args.out.open("w", encoding="utf-8") as out:
        for item_id in sorted(items):
            out.write(json.dumps({"kind": "item", "item_id": item_id, "title": items[item_id]}) + "\n")
        for sid in order:
            record = {"kind": "session", "session_id": sid, **sessions[sid]}
            if sid in bundles:
                record["bundles"] = bundles[sid]
            out.write(json.dumps(record) + "\n")
    print(f"wrote {len(items)} items and {len(order)} sessions to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
