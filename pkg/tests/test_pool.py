from datetime import datetime, timezone

import pytest

from pam_curator.errors import DataError, ValidationError
from pam_curator.pool import (
    SampleRecord,
    SplitBounds,
    dump_pool,
    load_pool,
    snapshot_path,
)


def rec(sid="a", year=2020, **kw):
    return SampleRecord(sample_id=sid,
                        recorded_at=datetime(year, 6, 1, tzinfo=timezone.utc),
                        **kw)


class TestSplitDerivation:
    def test_default_boundaries(self):
        bounds = SplitBounds()
        assert bounds.split_for(datetime(2019, 1, 1, tzinfo=timezone.utc)) == "train"
        assert bounds.split_for(datetime(2020, 12, 31, tzinfo=timezone.utc)) == "train"
        assert bounds.split_for(datetime(2021, 5, 5, tzinfo=timezone.utc)) == "val"
        assert bounds.split_for(datetime(2022, 5, 5, tzinfo=timezone.utc)) == "test"

    def test_configurable_boundaries(self):
        bounds = SplitBounds(val_year=2010, test_year=2011)
        assert bounds.split_for(datetime(2009, 1, 1, tzinfo=timezone.utc)) == "train"
        assert bounds.split_for(datetime(2010, 1, 1, tzinfo=timezone.utc)) == "val"


class TestRecordInvariants:
    def test_noise_flip_requires_negative(self):
        with pytest.raises(ValidationError):
            rec(label_state="positive", label_source="noise_flip")
        rec(label_state="negative", label_source="noise_flip")

    def test_bad_state_rejected(self):
        with pytest.raises(ValidationError):
            rec(label_state="maybe")

    def test_roundtrip(self):
        r = rec(sid="x", label_state="positive", label_source="human",
                species="orca", ecotype="SRKW")
        back = SampleRecord.from_dict(r.to_dict())
        assert back == r


class TestPersistence:
    def test_dump_load_roundtrip(self, tmp_path):
        records = [rec(sid=f"s{i}", year=2019 + i % 4) for i in range(10)]
        records[3].label_state = "positive"
        records[3].label_source = "seed"
        path = tmp_path / "pool.jsonl"
        dump_pool(records, path)
        back = load_pool(path)
        assert sorted(r.sample_id for r in back) == sorted(r.sample_id for r in records)
        assert {r.sample_id: r for r in back}["s3"].label_state == "positive"

    def test_dumps_are_byte_identical(self, tmp_path):
        records = [rec(sid=f"s{i}") for i in range(20)]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        dump_pool(records, a)
        dump_pool(list(reversed(records)), b)  # order must not matter
        assert a.read_bytes() == b.read_bytes()

    def test_duplicate_ids_rejected_on_load(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        line = '{"sample_id": "x", "recorded_at": "2020-01-01T00:00:00+00:00"}\n'
        path.write_text(line + line)
        with pytest.raises(DataError):
            load_pool(path)

    def test_snapshot_naming(self):
        assert snapshot_path("/data/pool.jsonl", 7).name == "pool.iter0007.jsonl"
