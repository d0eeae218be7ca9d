import json
import random

import pytest

import bundlegen as bg
from bundlegen.dataset import Session, chronological_split, load_dataset, save_dataset
from bundlegen.errors import DatasetError

from conftest import write_dataset


def item(item_id, title):
    return {"kind": "item", "item_id": item_id, "title": title}


def session(sid, uid, ts, items, bundles=None):
    record = {"kind": "session", "session_id": sid, "user_id": uid, "timestamp": ts, "items": items}
    if bundles is not None:
        record["bundles"] = bundles
    return record


class TestLoadDataset:
    def test_fixture_counts(self, fixture_data):
        sessions, catalog, gt = fixture_data
        assert len(sessions) == 12
        assert len(catalog) == 43
        assert sum(len(g.bundles) for g in gt.values()) == 15

    def test_empty_file_is_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        sessions, catalog, gt = load_dataset(path)
        assert sessions == [] and catalog == {} and gt == {}

    def test_dangling_item_reference_names_the_id(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.jsonl",
            [item("i1", "a thing"), session("s1", "u1", 1, ["i1", "i9"])],
        )
        with pytest.raises(DatasetError, match="i9"):
            load_dataset(path)

    def test_duplicate_session_id_rejected(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.jsonl",
            [item("i1", "t"), session("s1", "u1", 1, ["i1"]), session("s1", "u2", 2, ["i1"])],
        )
        with pytest.raises(DatasetError, match="duplicate session_id"):
            load_dataset(path)

    def test_undersized_bundle_rejected(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.jsonl",
            [item("i1", "t"), item("i2", "t2"),
             session("s1", "u1", 1, ["i1", "i2"], [{"items": ["i1"], "intent": "solo"}])],
        )
        with pytest.raises(DatasetError, match="fewer than 2"):
            load_dataset(path)

    def test_bundle_outside_session_rejected(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.jsonl",
            [item("i1", "t"), item("i2", "t"), item("i3", "t"),
             session("s1", "u1", 1, ["i1", "i2"], [{"items": ["i1", "i3"], "intent": "x"}])],
        )
        with pytest.raises(DatasetError, match="not in session"):
            load_dataset(path)

    def test_empty_intent_rejected(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.jsonl",
            [item("i1", "t"), item("i2", "t"),
             session("s1", "u1", 1, ["i1", "i2"], [{"items": ["i1", "i2"], "intent": "  "}])],
        )
        with pytest.raises(DatasetError, match="empty intent"):
            load_dataset(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(item("i1", "t")) + "\n{oops\n")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path)

    def test_mirrors_published_catalog_statistics(self, tmp_path):
        # Same shape as the largest electronics catalog used for evaluation:
        # 888 users, 3499 items, 1145 sessions, 1750 bundles.
        records = [item(f"i{n:04d}", f"gadget {n}") for n in range(3499)]
        rng = random.Random(7)
        bundles_left = 1750
        for n in range(1145):
            uid = f"u{n % 888:03d}"
            items_in = [f"i{(n * 3 + j) % 3499:04d}" for j in range(4)]
            n_bundles = 2 if bundles_left - (1145 - n - 1) >= 2 else 1
            bundles_left -= n_bundles
            bundles = [
                {"items": rng.sample(items_in, 2), "intent": "three word intent"}
                for _ in range(n_bundles)
            ]
            records.append(session(f"s{n:04d}", uid, n, items_in, bundles))
        path = write_dataset(tmp_path / "electronic.jsonl", records)

        sessions, catalog, gt = load_dataset(path)
        assert len({s.user_id for s in sessions}) == 888
        assert len(catalog) == 3499
        assert len(sessions) == 1145
        assert sum(len(g.bundles) for g in gt.values()) == 1750

    def test_load_save_load_identity(self, fixture_data, tmp_path):
        sessions, catalog, gt = fixture_data
        out = tmp_path / "copy.jsonl"
        save_dataset(out, sessions, catalog, gt)
        sessions2, catalog2, gt2 = load_dataset(out)
        assert sessions2 == list(sessions)
        assert catalog2 == dict(catalog)
        assert gt2 == dict(gt)


def make_sessions(n, timestamps=None):
    return [
        Session(session_id=f"s{i:03d}", user_id="u", timestamp=timestamps[i] if timestamps else i,
                item_ids=("x",))
        for i in range(n)
    ]


class TestChronologicalSplit:
    def test_ten_sessions_split_7_1_2(self):
        split = chronological_split(make_sessions(10))
        assert (len(split.train), len(split.validation), len(split.test)) == (7, 1, 2)

    def test_three_sessions_floor_rule(self):
        split = chronological_split(make_sessions(3))
        assert (len(split.train), len(split.validation), len(split.test)) == (2, 0, 1)

    def test_equal_timestamps_fall_back_to_session_id(self):
        sessions = make_sessions(5, timestamps=[9, 9, 9, 9, 9])
        shuffled = sessions[::-1]
        split = chronological_split(shuffled)
        ordered = [s.session_id for s in split.train + split.validation + split.test]
        assert ordered == sorted(ordered)

    def test_split_is_a_partition(self):
        rng = random.Random(3)
        for n in [3, 4, 7, 10, 23, 100, 331]:
            sessions = make_sessions(n, timestamps=[rng.randrange(100) for _ in range(n)])
            split = chronological_split(sessions)
            combined = list(split.train) + list(split.validation) + list(split.test)
            assert sorted(s.session_id for s in combined) == sorted(s.session_id for s in sessions)
            assert len({id(s) for s in combined}) == n

    def test_boundary_timestamps_ordered(self):
        rng = random.Random(4)
        timestamps = rng.sample(range(10000), 50)
        split = chronological_split(make_sessions(50, timestamps=timestamps))
        assert max(s.timestamp for s in split.train) <= min(s.timestamp for s in split.validation)
        assert max(s.timestamp for s in split.validation) <= min(s.timestamp for s in split.test)

    def test_too_few_sessions(self):
        with pytest.raises(DatasetError, match="at least 3"):
            chronological_split(make_sessions(2))

    def test_bad_ratios(self):
        with pytest.raises(DatasetError):
            chronological_split(make_sessions(5), ratios=(0.5, 0.2, 0.2))
        with pytest.raises(DatasetError):
            chronological_split(make_sessions(5), ratios=(0.9, -0.1, 0.2))
