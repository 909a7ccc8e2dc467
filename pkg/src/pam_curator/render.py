"""Deterministic spectrogram PNG rendering for the labeling UI.

Linear frequency axis 0-16 kHz over the full image height (bottom = 0 Hz),
time ticks overlaid along the bottom edge, fixed colormap. Identical input
and style always produce byte-identical PNG output.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image, ImageDraw

from .audio_io import AudioSegment
from .detector import compute_spectrogram
from .errors import ValidationError

IMAGE_WIDTH = 800
IMAGE_HEIGHT = 512
DB_RANGE = (-90.0, -10.0)
MAX_FREQ_HZ = 16_000.0

# Viridis anchor colors (public-domain colormap), linearly interpolated to 256.
_VIRIDIS_ANCHORS = [
    (68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142),
    (33, 144, 141), (39, 173, 129), (92, 200, 99), (170, 220, 50),
    (253, 231, 37),
]


def _build_lut(anchors) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.float64)
    positions = np.linspace(0, 255, len(anchors))
    lut = np.empty((256, 3), dtype=np.uint8)
    for ch in range(3):
        lut[:, ch] = np.clip(
            np.interp(np.arange(256), positions, anchors[:, ch]), 0, 255
        ).astype(np.uint8)
    return lut


_LUTS = {
    "default": _build_lut(_VIRIDIS_ANCHORS),
    "gray": _build_lut([(0, 0, 0), (255, 255, 255)]),
}

STYLES = tuple(_LUTS)


def render_spectrogram_png(seg: AudioSegment, style: str = "default") -> bytes:
    """Render one segment to PNG bytes (deterministic for a given input)."""
    if style not in _LUTS:
        raise ValidationError(f"unknown style {style!r}; expected one of {STYLES}")
    spec = compute_spectrogram(seg)
    values = spec.values_db
    # Rows: bin 0 (0 Hz) at the bottom of the image, Nyquist at the top.
    flipped = values[::-1, :]
    lo, hi = DB_RANGE
    norm = np.clip((flipped - lo) / (hi - lo), 0.0, 1.0)
    indexed = (norm * 255).astype(np.uint8)
    img = Image.fromarray(_LUTS[style][indexed])  # [freq, time] -> RGB
    img = img.resize((IMAGE_WIDTH, IMAGE_HEIGHT), resample=Image.NEAREST)

    draw = ImageDraw.Draw(img)
    duration = seg.duration_s
    tick_every_s = max(1, int(round(duration / 8)))
    t = tick_every_s
    while t < duration:
        x = int(round(t / duration * (IMAGE_WIDTH - 1)))
        draw.line([(x, IMAGE_HEIGHT - 8), (x, IMAGE_HEIGHT - 1)], fill=(255, 255, 255))
        draw.text((x + 2, IMAGE_HEIGHT - 12), f"{t:d}s", fill=(255, 255, 255))
        t += tick_every_s
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def freq_to_row(freq_hz: float) -> int:
    """Image row (0 = top) of a frequency on the rendered axis."""
    frac = 1.0 - freq_hz / MAX_FREQ_HZ
    return int(round(frac * (IMAGE_HEIGHT - 1)))
