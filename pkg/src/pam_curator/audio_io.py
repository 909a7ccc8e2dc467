"""Audio ingestion: decode WAV/FLAC, resample to the canonical 32 kHz,
high-pass filter, and split into 5-minute segments.

All operations are pure functions over AudioSegment values; running one
file per worker across a pool is safe.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import DecodeError, UnsupportedFormatError, ValidationError
from .flac import read_flac

CANONICAL_RATE_HZ = 32_000
MAX_SEGMENT_S = 300.0
# Segments shorter than this are rejected from the labeling pool: too short
# for a meaningful STFT column sequence.
MIN_POOL_DURATION_S = 1.0

EPOCH_UTC = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass
class AudioSegment:
    sample_id: str
    samples: np.ndarray
    sample_rate_hz: int
    start_time: datetime = field(default=EPOCH_UTC)
    duration_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.duration_s == 0.0 and self.samples.size:
            self.duration_s = self.samples.size / self.sample_rate_hz
        self.validate()

    def validate(self) -> None:
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError(f"segment {self.sample_id}: non-finite samples")
        if self.duration_s > MAX_SEGMENT_S:
            raise ValidationError(
                f"segment {self.sample_id}: duration {self.duration_s:.2f}s exceeds "
                f"{MAX_SEGMENT_S:.0f}s; split upstream")
        expected = self.duration_s * self.sample_rate_hz
        if abs(expected - self.samples.size) > 1.0:
            raise ValidationError(
                f"segment {self.sample_id}: duration {self.duration_s}s inconsistent "
                f"with {self.samples.size} samples at {self.sample_rate_hz} Hz")


def _sign_extend_24bit(raw: bytes) -> np.ndarray:
    triples = np.frombuffer(raw, dtype=np.uint8)
    n = triples.size // 3
    triples = triples[:n * 3].reshape(n, 3).astype(np.int32)
    value = triples[:, 0] | (triples[:, 1] << 8) | (triples[:, 2] << 16)
    return np.where(value >= 1 << 23, value - (1 << 24), value)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a RIFF WAVE file to (float32 mono-or-multichannel samples, rate).

    Supports PCM 16/24/32-bit int and 32-bit float (plus the extensible
    wrappers of those). Multi-channel data is averaged to mono.
    """
    data = Path(path).read_bytes()
    if len(data) == 0:
        return np.zeros(0, dtype=np.float32), CANONICAL_RATE_HZ
    if len(data) < 12 or data[:4] != b"RIFF":
        raise DecodeError("not a RIFF container", 0)
    if data[8:12] != b"WAVE":
        raise DecodeError("RIFF container is not WAVE", 8)

    pos = 12
    fmt = None
    pcm: np.ndarray | None = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + chunk_size > len(data):
            raise DecodeError(f"truncated {chunk_id!r} chunk", pos)
        body = data[body_start:body_start + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise DecodeError("fmt chunk too short", pos)
            audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if audio_format == 0xFFFE and chunk_size >= 40:
                # WAVE_FORMAT_EXTENSIBLE: first two bytes of the SubFormat GUID.
                (audio_format,) = struct.unpack_from("<H", body, 24)
            fmt = (audio_format, channels, rate, bits)
        elif chunk_id == b"data":
            if fmt is None:
                raise DecodeError("data chunk precedes fmt chunk", pos)
            audio_format, channels, rate, bits = fmt
            if audio_format == 1 and bits == 16:
                pcm = np.frombuffer(body, dtype="<i2").astype(np.float32) / 32768.0
            elif audio_format == 1 and bits == 24:
                pcm = _sign_extend_24bit(body).astype(np.float32) / float(1 << 23)
            elif audio_format == 1 and bits == 32:
                pcm = np.frombuffer(body, dtype="<i4").astype(np.float32) / float(1 << 31)
            elif audio_format == 3 and bits == 32:
                pcm = np.frombuffer(body, dtype="<f4").astype(np.float32)
            else:
                raise UnsupportedFormatError(
                    f"unsupported WAV encoding: format={audio_format}, bits={bits}")
            if channels > 1:
                usable = (pcm.size // channels) * channels
                pcm = pcm[:usable].reshape(-1, channels).mean(axis=1)
        pos = body_start + chunk_size + (chunk_size & 1)
    if fmt is None:
        raise DecodeError("no fmt chunk found", pos)
    if pcm is None:
        raise DecodeError("no data chunk found", pos)
    return np.clip(pcm, -1.0, 1.0), fmt[2]


def write_wav(path: str | Path, samples: np.ndarray, rate: int,
              bits: int = 16) -> None:
    """Write float32 samples in [-1, 1] as PCM16 or float32 WAV."""
    samples = np.asarray(samples, dtype=np.float32)
    if bits == 16:
        body = (np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2").tobytes()
        fmt = struct.pack("<HHIIHH", 1, 1, rate, rate * 2, 2, 16)
    elif bits == 32:
        body = samples.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, rate, rate * 4, 4, 32)
    else:
        raise ValidationError(f"unsupported output bit depth {bits}")
    out = b"".join([
        b"RIFF", struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(body)), b"WAVE",
        b"fmt ", struct.pack("<I", len(fmt)), fmt,
        b"data", struct.pack("<I", len(body)), body,
    ])
    Path(path).write_bytes(out)


def _read_any(path: Path, fmt: str) -> tuple[np.ndarray, int]:
    if fmt == "wav":
        return read_wav(path)
    if fmt == "flac":
        data = path.read_bytes()
        if len(data) == 0:
            return np.zeros(0, dtype=np.float32), CANONICAL_RATE_HZ
        samples, rate, bits = read_flac(data)
        scale = float(1 << (bits - 1))
        mono = samples.astype(np.float32).mean(axis=1) / scale
        return np.clip(mono, -1.0, 1.0), rate
    raise ValidationError(f"unknown format {fmt!r}; expected wav or flac")


def decode(path: str | Path, fmt: str | None = None,
           start_time: datetime = EPOCH_UTC,
           sample_id_prefix: str | None = None) -> list[AudioSegment]:
    """Decode an audio file into chronological segments of at most 5 minutes.

    The last segment may be shorter. A zero-length file yields an empty list.
    """
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"no such file: {path}", 0)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower() or "wav"
    samples, rate = _read_any(path, fmt)
    prefix = sample_id_prefix if sample_id_prefix is not None else path.stem
    max_len = int(MAX_SEGMENT_S * rate)
    segments = []
    for idx, start in enumerate(range(0, samples.size, max_len)):
        chunk = samples[start:start + max_len]
        segments.append(AudioSegment(
            sample_id=f"{prefix}#{idx:03d}",
            samples=chunk,
            sample_rate_hz=rate,
            start_time=start_time + timedelta(seconds=start / rate),
            duration_s=chunk.size / rate,
        ))
    return segments


def _resample_taps(up: int, down: int) -> np.ndarray:
    # Windowed-sinc polyphase anti-aliasing filter: 64 taps per phase,
    # Kaiser beta=8, cut at the lower of the two Nyquist frequencies.
    max_rate = max(up, down)
    n_taps = 64 * max_rate + 1
    return sps.firwin(n_taps, 1.0 / max_rate, window=("kaiser", 8.0))


def resample(seg: AudioSegment, target_hz: int) -> AudioSegment:
    """Band-limited polyphase resampling; identity when rates already match."""
    if target_hz <= 0:
        raise ValidationError(f"target_hz must be positive, got {target_hz}")
    if seg.sample_rate_hz == target_hz:
        return seg
    g = math.gcd(seg.sample_rate_hz, target_hz)
    up, down = target_hz // g, seg.sample_rate_hz // g
    if seg.samples.size == 0:
        out = seg.samples
    else:
        out = sps.resample_poly(seg.samples.astype(np.float64), up, down,
                                window=_resample_taps(up, down)).astype(np.float32)
    return AudioSegment(
        sample_id=seg.sample_id,
        samples=out,
        sample_rate_hz=target_hz,
        start_time=seg.start_time,
        duration_s=out.size / target_hz,
    )


def highpass(seg: AudioSegment, cutoff_hz: float) -> AudioSegment:
    """Zero-phase 4th-order Butterworth high-pass (forward-backward)."""
    nyquist = seg.sample_rate_hz / 2.0
    if not 0.0 < cutoff_hz < nyquist:
        raise ValidationError(
            f"cutoff {cutoff_hz} Hz out of range (0, {nyquist}) for "
            f"{seg.sample_rate_hz} Hz audio")
    sos = sps.butter(4, cutoff_hz, btype="highpass", fs=seg.sample_rate_hz,
                     output="sos")
    if seg.samples.size == 0:
        filtered = seg.samples
    else:
        filtered = sps.sosfiltfilt(sos, seg.samples.astype(np.float64)).astype(np.float32)
    return AudioSegment(
        sample_id=seg.sample_id,
        samples=filtered,
        sample_rate_hz=seg.sample_rate_hz,
        start_time=seg.start_time,
        duration_s=seg.duration_s,
    )
