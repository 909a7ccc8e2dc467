"""Bit-exact binary containers for embeddings and feature vectors.

Pooled container: magic ``DORIEMB1``, little-endian u32 count, u32
hidden_size, then count rows of hidden_size float32. Chunk-level container:
magic ``DORICHK1``, u32 count, u32 hidden_size, then per record u32 chunks,
u32 hidden_steps followed by chunks*hidden_steps*hidden_size float32. Both
carry a sidecar JSON (``<path>.json``) with the sample_ids in row order and
the kind tag.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .features import ChunkEmbeddingMatrix

MAGIC_POOLED = b"DORIEMB1"
MAGIC_CHUNKED = b"DORICHK1"


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _write_sidecar(path: Path, sample_ids: list[str], kind: str) -> None:
    _sidecar_path(path).write_text(
        json.dumps({"sample_ids": sample_ids, "kind": kind}, indent=0),
        encoding="utf-8")


def _read_sidecar(path: Path) -> tuple[list[str], str]:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise DataError(f"missing sidecar {sidecar}")
    doc = json.loads(sidecar.read_text(encoding="utf-8"))
    return list(doc["sample_ids"]), doc.get("kind", "embedding")


def write_pooled(path: str | Path, sample_ids: list[str], matrix: np.ndarray,
                 kind: str = "embedding") -> None:
    path = Path(path)
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValidationError("pooled matrix must be 2-D [count, hidden_size]")
    if len(sample_ids) != matrix.shape[0]:
        raise ValidationError("sample_ids length must match row count")
    with open(path, "wb") as fh:
        fh.write(MAGIC_POOLED)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))
    _write_sidecar(path, list(sample_ids), kind)


def read_pooled(path: str | Path) -> tuple[list[str], np.ndarray, str]:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC_POOLED:
        raise DataError(f"{path}: bad magic for pooled embedding file")
    count, hidden = struct.unpack_from("<II", data, 8)
    expected = 16 + count * hidden * 4
    if len(data) < expected:
        raise DataError(f"{path}: truncated pooled embedding file")
    matrix = np.frombuffer(data, dtype="<f4", count=count * hidden,
                           offset=16).reshape(count, hidden).copy()
    sample_ids, kind = _read_sidecar(path)
    if len(sample_ids) != count:
        raise DataError(f"{path}: sidecar id count {len(sample_ids)} != {count}")
    return sample_ids, matrix, kind


def write_chunked(path: str | Path,
                  records: list[ChunkEmbeddingMatrix]) -> None:
    path = Path(path)
    if not records:
        raise ValidationError("no records to write")
    hidden = records[0].hidden_size
    for rec in records:
        if rec.hidden_size != hidden:
            raise ValidationError("all records must share hidden_size")
    with open(path, "wb") as fh:
        fh.write(MAGIC_CHUNKED)
        fh.write(struct.pack("<II", len(records), hidden))
        for rec in records:
            fh.write(struct.pack("<II", rec.chunks, rec.hidden_steps))
            fh.write(rec.data.astype("<f4").tobytes(order="C"))
    _write_sidecar(path, [rec.sample_id for rec in records], "chunk_embedding")


def read_chunked(path: str | Path) -> list[ChunkEmbeddingMatrix]:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC_CHUNKED:
        raise DataError(f"{path}: bad magic for chunked embedding file")
    count, hidden = struct.unpack_from("<II", data, 8)
    sample_ids, _ = _read_sidecar(path)
    if len(sample_ids) != count:
        raise DataError(f"{path}: sidecar id count {len(sample_ids)} != {count}")
    offset = 16
    records = []
    for i in range(count):
        if offset + 8 > len(data):
            raise DataError(f"{path}: truncated record header at {offset}")
        chunks, steps = struct.unpack_from("<II", data, offset)
        offset += 8
        n_floats = chunks * steps * hidden
        if offset + n_floats * 4 > len(data):
            raise DataError(f"{path}: truncated record data at {offset}")
        block = np.frombuffer(data, dtype="<f4", count=n_floats,
                              offset=offset).reshape(chunks, steps, hidden).copy()
        offset += n_floats * 4
        records.append(ChunkEmbeddingMatrix(sample_id=sample_ids[i], data=block))
    return records
