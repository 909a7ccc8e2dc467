"""Dataset manifest: the JSON-lines ledger binding audio files, checksums,
timestamps, sites, and label state together, plus the verified ingest store.

Ingest is idempotent: re-running an unchanged manifest downloads nothing, and
checksum mismatches quarantine the entry instead of poisoning the store.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import requests

from .errors import DataError

FETCH_WORKERS = 4


@dataclass
class ManifestEntry:
    sample_id: str
    uri: str
    sha256: str
    recorded_at: datetime
    site: str = "unknown"
    license: str = "unknown"
    label_state: str | None = None
    label_source: str | None = None
    species: str | None = None
    ecotype: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.recorded_at.tzinfo is None:
            self.recorded_at = self.recorded_at.replace(tzinfo=timezone.utc)

    def to_dict(self) -> dict:
        doc = {
            "sample_id": self.sample_id,
            "uri": self.uri,
            "sha256": self.sha256,
            "recorded_at": self.recorded_at.isoformat(),
            "site": self.site,
            "license": self.license,
        }
        for key in ("label_state", "label_source", "species", "ecotype"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        doc.update(self.extra)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ManifestEntry":
        known = {"sample_id", "uri", "sha256", "recorded_at", "site", "license",
                 "label_state", "label_source", "species", "ecotype"}
        try:
            return cls(
                sample_id=doc["sample_id"],
                uri=doc["uri"],
                sha256=doc["sha256"],
                recorded_at=datetime.fromisoformat(doc["recorded_at"]),
                site=doc.get("site", "unknown"),
                license=doc.get("license", "unknown"),
                label_state=doc.get("label_state"),
                label_source=doc.get("label_source"),
                species=doc.get("species"),
                ecotype=doc.get("ecotype"),
                extra={k: v for k, v in doc.items() if k not in known},
            )
        except KeyError as exc:
            raise DataError(f"manifest entry missing field {exc}") from exc


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(ManifestEntry.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: bad JSON: {exc}") from exc
    ids = [e.sample_id for e in entries]
    if len(ids) != len(set(ids)):
        raise DataError(f"{path}: duplicate sample_ids")
    return entries


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    payload = "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n"
                      for e in entries)
    Path(path).write_text(payload, encoding="utf-8")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class IngestReport:
    fetched: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    quarantined: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.quarantined and not self.failed


class IngestStore:
    """Local verified store: files/, quarantine/, and an index JSONL."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.files_dir = self.root / "files"
        self.quarantine_dir = self.root / "quarantine"
        self.index_path = self.root / "index.jsonl"
        self.files_dir.mkdir(parents=True, exist_ok=True)
        self.quarantine_dir.mkdir(parents=True, exist_ok=True)

    def _load_index(self) -> dict:
        index = {}
        if self.index_path.exists():
            for line in self.index_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    doc = json.loads(line)
                    index[doc["sample_id"]] = doc
        return index

    def _write_index(self, index: dict) -> None:
        payload = "".join(json.dumps(index[k], sort_keys=True) + "\n"
                          for k in sorted(index))
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix="index.")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, self.index_path)

    def path_for(self, entry: ManifestEntry) -> Path:
        suffix = Path(entry.uri).suffix or ".bin"
        return self.files_dir / f"{entry.sample_id}{suffix}"

    def _fetch(self, entry: ManifestEntry, base_dir: Path) -> Path:
        dest = self.path_for(entry)
        fd, tmp = tempfile.mkstemp(dir=self.files_dir, prefix=dest.name + ".")
        os.close(fd)
        tmp = Path(tmp)
        try:
            if entry.uri.startswith(("http://", "https://")):
                with requests.get(entry.uri, stream=True, timeout=60) as resp:
                    resp.raise_for_status()
                    with open(tmp, "wb") as fh:
                        for block in resp.iter_content(1 << 20):
                            fh.write(block)
            else:
                src = Path(entry.uri)
                if not src.is_absolute():
                    src = base_dir / src
                if not src.exists():
                    raise DataError(f"source file not found: {src}")
                shutil.copyfile(src, tmp)
            digest = sha256_file(tmp)
            if digest != entry.sha256:
                quarantined = self.quarantine_dir / dest.name
                os.replace(tmp, quarantined)
                raise ChecksumMismatch(
                    f"{entry.sample_id}: sha256 {digest} != manifest {entry.sha256}")
            os.replace(tmp, dest)
            return dest
        finally:
            if tmp.exists():
                tmp.unlink()

    def ingest(self, manifest_path: str | Path,
               max_workers: int = FETCH_WORKERS) -> IngestReport:
        manifest_path = Path(manifest_path)
        entries = load_manifest(manifest_path)
        index = self._load_index()
        report = IngestReport()
        to_fetch = []
        for entry in entries:
            known = index.get(entry.sample_id)
            dest = self.path_for(entry)
            if known and known.get("sha256") == entry.sha256 and dest.exists():
                report.skipped.append(entry.sample_id)
                continue
            to_fetch.append(entry)

        def work(entry: ManifestEntry):
            try:
                self._fetch(entry, manifest_path.parent)
                return entry, None
            except ChecksumMismatch as exc:
                return entry, ("quarantine", str(exc))
            except Exception as exc:
                return entry, ("failed", str(exc))

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, to_fetch))
        for entry, err in sorted(results, key=lambda r: r[0].sample_id):
            if err is None:
                report.fetched.append(entry.sample_id)
                doc = entry.to_dict()
                doc["store_path"] = str(self.path_for(entry).relative_to(self.root))
                index[entry.sample_id] = doc
            elif err[0] == "quarantine":
                report.quarantined.append(entry.sample_id)
            else:
                report.failed.append((entry.sample_id, err[1]))
        self._write_index(index)
        return report

    def export_manifest(self) -> list[ManifestEntry]:
        """Rebuild manifest entries from the index (round-trips ingest)."""
        index = self._load_index()
        entries = []
        for sample_id in sorted(index):
            doc = dict(index[sample_id])
            doc.pop("store_path", None)
            entries.append(ManifestEntry.from_dict(doc))
        return entries

    def audio_path(self, sample_id: str) -> Path | None:
        index = self._load_index()
        doc = index.get(sample_id)
        if doc is None:
            return None
        return self.root / doc["store_path"]


class ChecksumMismatch(DataError):
    pass


def data_dir() -> Path:
    return Path(os.environ.get("PAM_DATA_DIR", Path.cwd() / "pam_data"))


def cache_dir() -> Path:
    return Path(os.environ.get("PAM_CACHE_DIR", data_dir() / "cache"))
