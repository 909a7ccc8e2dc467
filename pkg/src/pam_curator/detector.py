"""Whistle-and-moan detection chain: click removal, spectrogram, median/tonal
denoising, Gaussian smoothing, binarization, and connected-region extraction.

The stages compose into detect(); each stage is a pure function so the chain
can be tuned, tested, and parallelized per segment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage
from scipy import signal as sps

from .audio_io import EPOCH_UTC, AudioSegment, highpass
from .errors import ValidationError

FFT_SIZE = 1024
HOP_SIZE = 512
DB_FLOOR = -120.0
CLICK_WINDOW_SAMPLES = 1024


@dataclass
class Spectrogram:
    values_db: np.ndarray          # [freq_bins, time_frames]
    freq_resolution_hz: float
    time_resolution_s: float
    origin_time: datetime = EPOCH_UTC

    def __post_init__(self):
        if not np.all(np.isfinite(self.values_db)):
            raise ValidationError("spectrogram contains non-finite values")

    @property
    def n_freq_bins(self) -> int:
        return self.values_db.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values_db.shape[1]


@dataclass
class DetectorParams:
    gamma: float = 1.0
    p: float = 2.0
    alpha: float = 0.95
    kappa: int = 21
    beta: float = 9.0
    min_length: int = 12
    min_count: int = 40
    use_highpass_1khz: bool = True
    gauss_sigma: float = 1.0
    click_window: int = CLICK_WINDOW_SAMPLES

    def __post_init__(self):
        if self.gamma <= 0 or self.p <= 0:
            raise ValidationError("gamma and p must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0,1), got {self.alpha}")
        if self.kappa < 3 or self.kappa % 2 == 0:
            raise ValidationError(f"kappa must be an odd integer >= 3, got {self.kappa}")
        if self.min_length < 1 or self.min_count < 1:
            raise ValidationError("min_length and min_count must be >= 1")
        if self.gauss_sigma <= 0:
            raise ValidationError("gauss_sigma must be positive")


@dataclass
class ContourRegion:
    pixels: set = field(default_factory=set)   # {(freq_bin, time_frame)}
    bbox: tuple = (0, 0, 0, 0)                 # (f_min, f_max, t_min, t_max)
    ridge: list = field(default_factory=list)  # per-frame peak frequency, Hz

    @property
    def time_extent(self) -> int:
        return self.bbox[3] - self.bbox[2] + 1

    @property
    def pixel_count(self) -> int:
        return len(self.pixels)


def click_filter(seg: AudioSegment, gamma: float, p: float,
                 window: int = CLICK_WINDOW_SAMPLES) -> AudioSegment:
    """Suppress echolocation clicks with a sliding exponential gain.

    Gain per sample is 1 / (1 + z)^p with z = (x - mean) / (gamma * std) over
    a centered sliding window, z clamped at 0 so below-mean samples pass
    unchanged and the gain never exceeds 1.
    """
    if window < 16:
        raise ValidationError(f"click window must be >= 16 samples, got {window}")
    if gamma <= 0 or p <= 0:
        raise ValidationError("gamma and p must be positive")
    x = seg.samples.astype(np.float64)
    if x.size == 0:
        return seg
    size = min(window, x.size)
    mean = ndimage.uniform_filter1d(x, size=size, mode="reflect")
    mean_sq = ndimage.uniform_filter1d(x * x, size=size, mode="reflect")
    std = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    z = np.zeros_like(x)
    valid = std > 1e-12
    np.divide(x - mean, gamma * std, out=z, where=valid)
    np.maximum(z, 0.0, out=z)
    gain = np.power(1.0 + z, -p)
    return replace(seg, samples=(x * gain).astype(np.float32))


def compute_spectrogram(seg: AudioSegment, fft_size: int = FFT_SIZE,
                        hop_size: int = HOP_SIZE) -> Spectrogram:
    """Hann-windowed STFT magnitude in dB with a floor at DB_FLOOR."""
    if seg.samples.size < fft_size:
        raise ValidationError(
            f"segment {seg.sample_id}: {seg.samples.size} samples is shorter "
            f"than one FFT window ({fft_size})")
    window = np.hanning(fft_size)
    samples = seg.samples.astype(np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(samples, fft_size)[::hop_size]
    magnitude = np.abs(np.fft.rfft(frames * window, axis=1)).T
    floor_amp = 10.0 ** (DB_FLOOR / 20.0)
    values_db = 20.0 * np.log10(np.maximum(magnitude, floor_amp))
    return Spectrogram(
        values_db=values_db,
        freq_resolution_hz=seg.sample_rate_hz / fft_size,
        time_resolution_s=hop_size / seg.sample_rate_hz,
        origin_time=seg.start_time,
    )


def denoise(spec: Spectrogram, kappa: int, alpha: float) -> Spectrogram:
    """Remove spectral and tonal noise.

    Per frequency row: subtract a sliding time-axis median of width kappa,
    then subtract an exponential running average (decay alpha, initialized at
    the first frame) of the median-subtracted grid. The running average at
    frame t uses only frames < t, so transients keep their full prominence.
    """
    if kappa < 3 or kappa % 2 == 0:
        raise ValidationError(f"kappa must be an odd integer >= 3, got {kappa}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0,1), got {alpha}")
    values = spec.values_db
    med = ndimage.median_filter(values, size=(1, kappa), mode="reflect")
    residual = values - med
    # ema[t] = alpha*ema[t-1] + (1-alpha)*residual[t], ema[0] = residual[0],
    # realized as an IIR filter with the initial condition folded into zi.
    zi = (alpha * residual[:, 0])[:, None]
    ema, _ = sps.lfilter([1.0 - alpha], [1.0, -alpha], residual, axis=1, zi=zi)
    out = np.empty_like(residual)
    out[:, 0] = 0.0
    out[:, 1:] = residual[:, 1:] - ema[:, :-1]
    return Spectrogram(out, spec.freq_resolution_hz, spec.time_resolution_s,
                       spec.origin_time)


def binarize(spec: Spectrogram, gauss_sigma: float, beta: float) -> np.ndarray:
    """Gaussian-smooth then threshold: True where smoothed value > beta."""
    if gauss_sigma <= 0:
        raise ValidationError("gauss_sigma must be positive")
    smoothed = ndimage.gaussian_filter(spec.values_db, sigma=gauss_sigma,
                                       mode="reflect")
    return smoothed > beta


_STRUCTURE_8 = np.ones((3, 3), dtype=int)
_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def extract_regions(mask: np.ndarray, min_length: int, min_count: int,
                    connectivity: int = 8,
                    values: np.ndarray | None = None,
                    freq_resolution_hz: float = 1.0) -> list[ContourRegion]:
    """Connected components of the binary map that survive both size filters.

    A region is emitted iff its time extent is >= min_length frames AND it has
    >= min_count pixels. The ridge is the per-frame peak frequency: the
    highest-valued pixel row when `values` is given, else the mean pixel row.
    """
    if mask.ndim != 2 or mask.size == 0:
        raise ValidationError("mask must be a non-empty 2-D grid")
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labeled, n_labels = ndimage.label(mask, structure=structure)
    regions: list[ContourRegion] = []
    if n_labels == 0:
        return regions
    slices = ndimage.find_objects(labeled)
    for label_idx, slc in enumerate(slices, start=1):
        sub = labeled[slc] == label_idx
        f0, t0 = slc[0].start, slc[1].start
        t_extent = slc[1].stop - slc[1].start
        count = int(sub.sum())
        if t_extent < min_length or count < min_count:
            continue
        fs, ts = np.nonzero(sub)
        pixels = {(int(f + f0), int(t + t0)) for f, t in zip(fs, ts)}
        ridge = []
        for t_local in range(sub.shape[1]):
            rows = np.nonzero(sub[:, t_local])[0]
            if rows.size == 0:
                ridge.append(float("nan"))
                continue
            if values is not None:
                col = values[slc][:, t_local]
                peak_row = rows[np.argmax(col[rows])]
            else:
                peak_row = rows.mean()
            ridge.append(float((peak_row + f0) * freq_resolution_hz))
        ridge = [r for r in ridge if not np.isnan(r)]
        regions.append(ContourRegion(
            pixels=pixels,
            bbox=(int(f0), int(slc[0].stop - 1), int(t0), int(slc[1].stop - 1)),
            ridge=ridge,
        ))
    return regions


def detect(seg: AudioSegment, params: DetectorParams) -> list[ContourRegion]:
    """Full detection chain over one segment.

    click_filter -> optional 1 kHz highpass -> spectrogram -> denoise ->
    binarize -> extract_regions. The first kappa frames are burn-in for the
    running-average noise estimate and are excluded from region extraction.
    """
    stage = click_filter(seg, params.gamma, params.p, params.click_window)
    if params.use_highpass_1khz:
        stage = highpass(stage, 1000.0)
    spec = compute_spectrogram(stage)
    den = denoise(spec, params.kappa, params.alpha)
    mask = binarize(den, params.gauss_sigma, params.beta)
    burn_in = min(params.kappa, mask.shape[1])
    mask[:, :burn_in] = False
    if not mask.any():
        return []
    return extract_regions(mask, params.min_length, params.min_count,
                           values=den.values_db,
                           freq_resolution_hz=den.freq_resolution_hz)


def region_to_record(region: ContourRegion, spec: Spectrogram,
                     sample_id: str) -> dict:
    """JSON-lines record for one region (times in s, frequencies in Hz)."""
    f_min, f_max, t_min, t_max = region.bbox
    ridge_pairs = [
        [round((t_min + i) * spec.time_resolution_s, 6), round(f, 3)]
        for i, f in enumerate(region.ridge)
    ]
    return {
        "sample_id": sample_id,
        "t_min_s": round(t_min * spec.time_resolution_s, 6),
        "t_max_s": round((t_max + 1) * spec.time_resolution_s, 6),
        "f_min_hz": round(f_min * spec.freq_resolution_hz, 3),
        "f_max_hz": round((f_max + 1) * spec.freq_resolution_hz, 3),
        "pixel_count": region.pixel_count,
        "ridge": ridge_pairs,
    }


def write_regions_jsonl(path: str | Path,
                        records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
