"""Sample pool records and their JSON-lines persistence.

Every audio segment in the curation pool is one SampleRecord; the engine
mutates label state in place and snapshots the pool atomically per iteration
so any run can be replayed and byte-compared.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import DataError, ValidationError

LABEL_STATES = ("unlabeled", "positive", "negative", "pseudo_positive")
LABEL_SOURCES = ("none", "seed", "human", "oracle", "noise_flip", "pseudo")


@dataclass
class SplitBounds:
    val_year: int = 2021
    test_year: int = 2022

    def split_for(self, recorded_at: datetime) -> str:
        year = recorded_at.year
        if year < self.val_year:
            return "train"
        if year == self.val_year:
            return "val"
        return "test"


@dataclass
class SampleRecord:
    sample_id: str
    recorded_at: datetime
    site: str = "unknown"
    feature_ref: str = ""
    label_state: str = "unlabeled"
    label_source: str = "none"
    species: str | None = None
    ecotype: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.feature_ref:
            self.feature_ref = self.sample_id
        if self.recorded_at.tzinfo is None:
            self.recorded_at = self.recorded_at.replace(tzinfo=timezone.utc)
        self.validate()

    def validate(self) -> None:
        if self.label_state not in LABEL_STATES:
            raise ValidationError(f"bad label_state {self.label_state!r}")
        if self.label_source not in LABEL_SOURCES:
            raise ValidationError(f"bad label_source {self.label_source!r}")
        if self.label_source == "noise_flip" and self.label_state != "negative":
            raise ValidationError("noise_flip source requires negative state")

    @property
    def is_labeled(self) -> bool:
        return self.label_state != "unlabeled"

    @property
    def is_positive(self) -> bool:
        return self.label_state in ("positive", "pseudo_positive")

    def to_dict(self) -> dict:
        doc = {
            "sample_id": self.sample_id,
            "recorded_at": self.recorded_at.isoformat(),
            "site": self.site,
            "feature_ref": self.feature_ref,
            "label_state": self.label_state,
            "label_source": self.label_source,
        }
        if self.species is not None:
            doc["species"] = self.species
        if self.ecotype is not None:
            doc["ecotype"] = self.ecotype
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SampleRecord":
        try:
            return cls(
                sample_id=doc["sample_id"],
                recorded_at=datetime.fromisoformat(doc["recorded_at"]),
                site=doc.get("site", "unknown"),
                feature_ref=doc.get("feature_ref", ""),
                label_state=doc.get("label_state", "unlabeled"),
                label_source=doc.get("label_source", "none"),
                species=doc.get("species"),
                ecotype=doc.get("ecotype"),
                meta=doc.get("meta", {}),
            )
        except KeyError as exc:
            raise DataError(f"pool record missing field {exc}") from exc


def dump_pool(records: list[SampleRecord], path: str | Path) -> None:
    """Atomic JSONL write (temp + rename), records sorted by sample_id so
    snapshots of identical pools are byte-identical."""
    path = Path(path)
    payload = "".join(
        json.dumps(rec.to_dict(), sort_keys=True) + "\n"
        for rec in sorted(records, key=lambda r: r.sample_id))
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_pool(path: str | Path) -> list[SampleRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(SampleRecord.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: bad JSON: {exc}") from exc
    ids = [r.sample_id for r in records]
    if len(ids) != len(set(ids)):
        raise DataError(f"{path}: duplicate sample_ids in pool")
    return records


def snapshot_path(base: str | Path, iteration: int) -> Path:
    base = Path(base)
    return base.with_name(f"{base.stem}.iter{iteration:04d}{base.suffix}")
