"""Fixed-length feature vectors: pooled encoder embeddings, the 9-value
slice-polynomial set, and contour-ridge attributes.

Embeddings are ingested from files (the neural encoder itself is out of
scope); this module owns the pooling/normalization applied downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detector import ContourRegion, Spectrogram
from .errors import ValidationError

LAYER_NORM_EPS = 1e-5

# rocca_v1 vector layout. The order is part of the file format: never reorder,
# only append by consuming reserved slots and bumping the version.
ROCCA_V1_ATTRIBUTES = (
    "freq_start_hz",
    "freq_end_hz",
    "freq_min_hz",
    "freq_max_hz",
    "freq_mean_hz",
    "freq_median_hz",
    "duration_s",
    "freq_range_hz",
    "slope_overall_hz_per_s",
    "slope_mean_abs_hz_per_s",
    "frac_positive_slope",
    "frac_negative_slope",
    "frac_zero_slope",
    "inflection_count",
    "step_count",
    "slope_begin_hz_per_s",
    "slope_end_hz_per_s",
    "freq_coef_variation",
    "reserved_0",
    "reserved_1",
    "reserved_2",
    "reserved_3",
    "reserved_4",
    "reserved_5",
)
ROCCA_V1_LENGTH = len(ROCCA_V1_ATTRIBUTES)

KIND_LENGTHS = {"lda9": 9, "rocca": ROCCA_V1_LENGTH}


@dataclass
class FeatureVector:
    sample_id: str
    kind: str
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("embedding", "lda9", "rocca"):
            raise ValidationError(f"unknown feature kind {self.kind!r}")
        expected = KIND_LENGTHS.get(self.kind)
        if expected is not None and self.values.size != expected:
            raise ValidationError(
                f"{self.kind} vector must have length {expected}, got {self.values.size}")
        if self.kind == "embedding" and self.values.size < 1:
            raise ValidationError("embedding vector must be non-empty")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"feature vector {self.sample_id}: non-finite values")


@dataclass
class ChunkEmbeddingMatrix:
    sample_id: str
    data: np.ndarray  # [chunks, hidden_steps, hidden_size]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValidationError("chunk embedding matrix must be [chunks, steps, size] with positive dims")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"chunk matrix {self.sample_id}: non-finite values")

    @property
    def chunks(self) -> int:
        return self.data.shape[0]

    @property
    def hidden_steps(self) -> int:
        return self.data.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.data.shape[2]


def pool_embeddings(m: ChunkEmbeddingMatrix) -> FeatureVector:
    """Layer-normalize each (chunk, step) vector over hidden_size, then mean
    over hidden_steps, then mean over chunks."""
    if m.hidden_size < 2:
        raise ValidationError("hidden_size must be >= 2 for layer normalization")
    mean = m.data.mean(axis=2, keepdims=True)
    var = m.data.var(axis=2, keepdims=True)
    normalized = (m.data - mean) / np.sqrt(var + LAYER_NORM_EPS)
    pooled = normalized.mean(axis=1).mean(axis=0)
    return FeatureVector(sample_id=m.sample_id, kind="embedding", values=pooled,
                         meta={"chunks": m.chunks, "hidden_steps": m.hidden_steps})


def _skew(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    std = values.std()
    if std < 1e-12:
        return 0.0
    centered = values - values.mean()
    return float(np.mean(centered ** 3) / std ** 3)


def _fit_slice(pixels_t: np.ndarray, pixels_f: np.ndarray) -> tuple[float, float, float]:
    # Quadratic least squares with slice-local time origin; returns
    # (constant, linear, quadratic).
    c2, c1, c0 = np.polyfit(pixels_t, pixels_f, 2)
    return float(c0), float(c1), float(c2)


def lda9_features(regions: list[ContourRegion], sample_id: str,
                  slice_len: int) -> FeatureVector:
    """Nine summary statistics of per-slice quadratic fits.

    Regions at least slice_len frames long are cut into consecutive
    slice_len-frame slices; a quadratic freq(time) is fit to the true pixels
    of each slice (time measured from the slice start). The vector is
    [mean, std, skew] of the constant, linear, and quadratic coefficients.
    """
    if slice_len < 3:
        raise ValidationError(f"slice_len must be >= 3, got {slice_len}")
    coeffs: list[tuple[float, float, float]] = []
    for region in regions:
        t_min, t_max = region.bbox[2], region.bbox[3]
        extent = t_max - t_min + 1
        if extent < slice_len:
            continue
        by_frame: dict[int, list[int]] = {}
        for f, t in region.pixels:
            by_frame.setdefault(t, []).append(f)
        for s in range(extent // slice_len):
            start = t_min + s * slice_len
            ts, fs = [], []
            for t in range(start, start + slice_len):
                for f in by_frame.get(t, ()):
                    ts.append(t - start)
                    fs.append(f)
            if len(set(ts)) < 3:
                continue
            coeffs.append(_fit_slice(np.asarray(ts, float), np.asarray(fs, float)))
    if not coeffs:
        return FeatureVector(sample_id=sample_id, kind="lda9",
                             values=np.zeros(9), meta={"empty": True})
    arr = np.asarray(coeffs)
    values = []
    for i in range(3):
        col = arr[:, i]
        values.extend([float(col.mean()), float(col.std()), _skew(col)])
    return FeatureVector(sample_id=sample_id, kind="lda9",
                         values=np.asarray(values),
                         meta={"n_slices": len(coeffs), "slice_len": slice_len})


def rocca_features(region: ContourRegion, spec: Spectrogram,
                   sample_id: str = "") -> FeatureVector:
    """Ridge-geometry attributes in the fixed rocca_v1 layout."""
    ridge = np.asarray(region.ridge, dtype=np.float64)
    if ridge.size == 0:
        raise ValidationError("region has no ridge")
    dt = spec.time_resolution_s
    values = np.zeros(ROCCA_V1_LENGTH)
    values[0] = ridge[0]
    values[1] = ridge[-1]
    values[2] = ridge.min()
    values[3] = ridge.max()
    values[4] = ridge.mean()
    values[5] = float(np.median(ridge))
    values[6] = ridge.size * dt
    values[7] = ridge.max() - ridge.min()
    meta = {"layout": "rocca_v1"}
    if ridge.size < 3:
        meta["short_ridge"] = True
        return FeatureVector(sample_id=sample_id, kind="rocca", values=values,
                             meta=meta)
    steps = np.diff(ridge)
    slopes = steps / dt
    values[8] = (ridge[-1] - ridge[0]) / ((ridge.size - 1) * dt)
    values[9] = float(np.abs(slopes).mean())
    values[10] = float(np.mean(steps > 0))
    values[11] = float(np.mean(steps < 0))
    values[12] = float(np.mean(steps == 0))
    signs = np.sign(steps)
    nonzero = signs[signs != 0]
    values[13] = float(np.sum(nonzero[1:] != nonzero[:-1])) if nonzero.size > 1 else 0.0
    values[14] = float(np.sum(np.abs(steps) > 2 * spec.freq_resolution_hz))
    k = min(3, steps.size)
    values[15] = float(slopes[:k].mean())
    values[16] = float(slopes[-k:].mean())
    mean_f = ridge.mean()
    values[17] = float(ridge.std() / mean_f) if abs(mean_f) > 1e-12 else 0.0
    return FeatureVector(sample_id=sample_id, kind="rocca", values=values,
                         meta=meta)
