"""Deterministic synthetic corpora for desk-scale experiments.

Two generators: an audio corpus (noise files plus chirp-injected positives,
with ground-truth boxes) for the detector chain, and a feature-vector pool
(overlapping Gaussian classes with time-derived splits) for active-learning
simulations. Both are fully determined by their seed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .audio_io import write_wav
from .errors import ValidationError
from .pool import SampleRecord

CORPUS_RATE_HZ = 32_000

SITES = ("saturna", "lime-kiln", "port-townsend")


@dataclass
class ChirpTruth:
    sample_id: str
    t0_s: float
    t1_s: float
    f0_hz: float
    f1_hz: float
    snr_db: float


def synth_segment_samples(rng: np.random.Generator, duration_s: float,
                          noise_std: float = 0.05,
                          chirp: ChirpTruth | None = None) -> np.ndarray:
    n = int(duration_s * CORPUS_RATE_HZ)
    x = rng.normal(0.0, noise_std, size=n)
    if chirp is not None:
        dur = chirp.t1_s - chirp.t0_s
        t = np.arange(int(dur * CORPUS_RATE_HZ)) / CORPUS_RATE_HZ
        sweep = chirp.f0_hz + (chirp.f1_hz - chirp.f0_hz) * t / dur
        phase = 2 * np.pi * np.cumsum(sweep) / CORPUS_RATE_HZ
        amp = 10 ** (chirp.snr_db / 20.0) * noise_std * np.sqrt(2.0)
        start = int(chirp.t0_s * CORPUS_RATE_HZ)
        x[start:start + t.size] += amp * np.sin(phase)
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def make_synthetic_corpus(out_dir: str | Path, n_files: int = 50,
                          positive_fraction: float = 0.2,
                          snr_range_db: tuple = (15.0, 25.0),
                          duration_s: float = 6.0,
                          seed: int = 0) -> tuple[Path, list[ChirpTruth]]:
    """Write WAV files plus a ground-truth manifest; returns (manifest, truths).

    Exactly round(n_files * positive_fraction) files carry a chirp. The
    manifest is JSON-lines with sha256, timestamps, sites, and oracle labels;
    chirp boxes land in a sidecar truth file.
    """
    if n_files < 1:
        raise ValidationError("n_files must be >= 1")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValidationError("positive_fraction must be in [0, 1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_pos = round(n_files * positive_fraction)
    pos_indices = set(rng.choice(n_files, size=n_pos, replace=False).tolist())
    base_time = datetime(2019, 1, 1, tzinfo=timezone.utc)
    truths: list[ChirpTruth] = []
    entries = []
    for i in range(n_files):
        sample_id = f"synth{seed:03d}-{i:04d}"
        chirp = None
        if i in pos_indices:
            t0 = float(rng.uniform(1.0, duration_s - 2.5))
            chirp = ChirpTruth(
                sample_id=sample_id,
                t0_s=round(t0, 3),
                t1_s=round(t0 + 1.5, 3),
                f0_hz=2000.0,
                f1_hz=8000.0,
                snr_db=round(float(rng.uniform(*snr_range_db)), 2),
            )
            truths.append(chirp)
        samples = synth_segment_samples(rng, duration_s, chirp=chirp)
        wav_path = out_dir / f"{sample_id}.wav"
        write_wav(wav_path, samples, CORPUS_RATE_HZ)
        sha = hashlib.sha256(wav_path.read_bytes()).hexdigest()
        entries.append({
            "sample_id": sample_id,
            "uri": wav_path.name,
            "sha256": sha,
            "recorded_at": (base_time + timedelta(minutes=10 * i)).isoformat(),
            "site": SITES[i % len(SITES)],
            "license": "CC-BY-4.0",
            "label_state": "positive" if chirp else "negative",
            "label_source": "oracle",
        })
    manifest_path = out_dir / "manifest.jsonl"
    manifest_path.write_text(
        "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries),
        encoding="utf-8")
    truth_path = out_dir / "truth.json"
    truth_path.write_text(json.dumps([t.__dict__ for t in truths], indent=2),
                          encoding="utf-8")
    return manifest_path, truths


# Frozen feature-pool geometry for the desk-scale AL experiments: overlapping
# Gaussian classes hard enough that labeling strategy materially changes the
# final detector (random labeling plateaus well below uncertainty sampling).
POOL_DIM = 48
POOL_INFORMATIVE_DIMS = 6
POOL_CLASS_SEPARATION = 2.0
POOL_SPLIT_PATTERN = ("train",) * 11 + ("val",) * 3 + ("test",) * 6


def make_synthetic_pool(n: int = 10_000, positive_fraction: float = 0.02,
                        seed: int = 123, n_seed_labels: int = 15,
                        dim: int = POOL_DIM,
                        separation: float = POOL_CLASS_SEPARATION,
                        informative: int = POOL_INFORMATIVE_DIMS
                        ) -> tuple[list[SampleRecord], dict, dict]:
    """Feature-vector pool with oracle labels and time-derived splits.

    Returns (records, features, oracle). Exactly round(fraction * n_split)
    positives per split; the first n_seed_labels training positives carry
    seed labels so the first retrain has a positive class.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    base = {
        "train": datetime(2019, 6, 1, tzinfo=timezone.utc),
        "val": datetime(2021, 3, 1, tzinfo=timezone.utc),
        "test": datetime(2022, 3, 1, tzinfo=timezone.utc),
    }
    pattern = POOL_SPLIT_PATTERN
    splits = [pattern[i % len(pattern)] for i in range(n)]
    split_idx: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for i, s in enumerate(splits):
        split_idx[s].append(i)
    pos_set: set[int] = set()
    for idxs in split_idx.values():
        k = round(len(idxs) * positive_fraction)
        if k > 0 and idxs:
            pos_set |= set(rng.choice(idxs, size=k, replace=False).tolist())
    center = np.zeros(dim)
    center[:informative] = separation / np.sqrt(informative)

    records: list[SampleRecord] = []
    features: dict[str, np.ndarray] = {}
    oracle: dict[str, bool] = {}
    for i in range(n):
        sid = f"s{i:05d}"
        is_pos = i in pos_set
        x = center + rng.normal(0.0, 1.0, dim) if is_pos else rng.normal(0.0, 1.0, dim)
        features[sid] = x
        oracle[sid] = bool(is_pos)
        records.append(SampleRecord(
            sample_id=sid,
            recorded_at=base[splits[i]] + timedelta(minutes=5 * i),
            site=SITES[i % len(SITES)],
        ))
    seeded = 0
    for i in sorted(pos_set):
        if splits[i] == "train" and seeded < n_seed_labels:
            records[i].label_state = "positive"
            records[i].label_source = "seed"
            seeded += 1
    return records, features, oracle
