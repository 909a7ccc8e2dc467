"""Minimal native FLAC support.

The sandbox ships no FLAC-capable library, so this module implements the
subset of the format the ingest path needs: a full decoder for
constant/verbatim/fixed/LPC subframes with Rice-coded residuals, and a
verbatim-subframe writer (used for fixtures and round-trip tests). Streams
are decoded to int32 sample frames; callers normalize to float.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import DecodeError, UnsupportedFormatError

FIXED_COEFFS = {
    0: [],
    1: [1],
    2: [2, -1],
    3: [3, -3, 1],
    4: [4, -6, 4, -1],
}


def crc8(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = ((crc << 1) ^ 0x07) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
    return crc


def crc16(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x8005) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


class _BitReader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.byte_pos = offset
        self.bit_pos = 0

    def tell_bytes(self) -> int:
        return self.byte_pos

    def at_end(self) -> bool:
        return self.byte_pos >= len(self.data)

    def read_uint(self, bits: int) -> int:
        value = 0
        for _ in range(bits):
            if self.byte_pos >= len(self.data):
                raise DecodeError("unexpected end of FLAC stream", self.byte_pos)
            bit = (self.data[self.byte_pos] >> (7 - self.bit_pos)) & 1
            value = (value << 1) | bit
            self.bit_pos += 1
            if self.bit_pos == 8:
                self.bit_pos = 0
                self.byte_pos += 1
        return value

    def read_sint(self, bits: int) -> int:
        value = self.read_uint(bits)
        if value >= (1 << (bits - 1)):
            value -= 1 << bits
        return value

    def read_unary(self) -> int:
        count = 0
        while True:
            if self.byte_pos >= len(self.data):
                raise DecodeError("unexpected end of FLAC stream in unary code", self.byte_pos)
            if self.read_uint(1):
                return count
            count += 1

    def align_to_byte(self) -> None:
        if self.bit_pos:
            self.bit_pos = 0
            self.byte_pos += 1


class FlacStreamInfo:
    def __init__(self, sample_rate: int, channels: int, bits_per_sample: int,
                 total_samples: int):
        self.sample_rate = sample_rate
        self.channels = channels
        self.bits_per_sample = bits_per_sample
        self.total_samples = total_samples


def _parse_stream_info(payload: bytes, offset: int) -> FlacStreamInfo:
    if len(payload) < 34:
        raise DecodeError("STREAMINFO block too short", offset)
    r = _BitReader(payload)
    r.read_uint(16)  # min block size
    r.read_uint(16)  # max block size
    r.read_uint(24)  # min frame size
    r.read_uint(24)  # max frame size
    sample_rate = r.read_uint(20)
    channels = r.read_uint(3) + 1
    bits = r.read_uint(5) + 1
    total = r.read_uint(36)
    if sample_rate == 0:
        raise DecodeError("STREAMINFO declares zero sample rate", offset)
    return FlacStreamInfo(sample_rate, channels, bits, total)


def _read_coded_number(r: _BitReader) -> int:
    """UTF-8-style variable length frame/sample number (up to 36 bits)."""
    head = r.read_uint(8)
    if head < 0x80:
        return head
    n_extra = 0
    mask = 0x40
    while head & mask:
        n_extra += 1
        mask >>= 1
    if n_extra < 1 or n_extra > 6:
        raise DecodeError("invalid coded number in frame header", r.tell_bytes())
    value = head & (mask - 1)
    for _ in range(n_extra):
        byte = r.read_uint(8)
        if byte & 0xC0 != 0x80:
            raise DecodeError("invalid coded number continuation", r.tell_bytes())
        value = (value << 6) | (byte & 0x3F)
    return value

_BLOCK_SIZE_TABLE = {1: 192, 2: 576, 3: 1152, 4: 2304, 5: 4608,
                     8: 256, 9: 512, 10: 1024, 11: 2048, 12: 4096,
                     13: 8192, 14: 16384, 15: 32768}

_SAMPLE_SIZE_TABLE = {1: 8, 2: 12, 4: 16, 5: 20, 6: 24, 7: 32}


def _decode_residual(r: _BitReader, block_size: int, predictor_order: int) -> list[int]:
    method = r.read_uint(2)
    if method > 1:
        raise DecodeError("reserved residual coding method", r.tell_bytes())
    param_bits = 4 if method == 0 else 5
    escape = (1 << param_bits) - 1
    partition_order = r.read_uint(4)
    n_partitions = 1 << partition_order
    if block_size % n_partitions:
        raise DecodeError("block size not divisible by partition count", r.tell_bytes())
    residual: list[int] = []
    for part in range(n_partitions):
        count = block_size >> partition_order
        if part == 0:
            count -= predictor_order
        param = r.read_uint(param_bits)
        if param == escape:
            raw_bits = r.read_uint(5)
            for _ in range(count):
                residual.append(r.read_sint(raw_bits) if raw_bits else 0)
        else:
            for _ in range(count):
                quotient = r.read_unary()
                remainder = r.read_uint(param) if param else 0
                v = (quotient << param) | remainder
                residual.append((v >> 1) ^ -(v & 1))
    return residual


def _decode_subframe(r: _BitReader, block_size: int, bps: int) -> np.ndarray:
    if r.read_uint(1):
        raise DecodeError("subframe padding bit set", r.tell_bytes())
    sf_type = r.read_uint(6)
    wasted = 0
    if r.read_uint(1):
        wasted = 1 + r.read_unary()
    bps -= wasted

    if sf_type == 0:
        value = r.read_sint(bps)
        out = np.full(block_size, value, dtype=np.int64)
    elif sf_type == 1:
        out = np.array([r.read_sint(bps) for _ in range(block_size)], dtype=np.int64)
    elif 8 <= sf_type <= 12:
        order = sf_type - 8
        warmup = [r.read_sint(bps) for _ in range(order)]
        residual = _decode_residual(r, block_size, order)
        coeffs = FIXED_COEFFS[order]
        samples = list(warmup)
        for res in residual:
            pred = sum(c * samples[-i - 1] for i, c in enumerate(coeffs))
            samples.append(pred + res)
        out = np.array(samples, dtype=np.int64)
    elif sf_type >= 32:
        order = sf_type - 31
        warmup = [r.read_sint(bps) for _ in range(order)]
        precision = r.read_uint(4) + 1
        if precision == 16:
            raise DecodeError("invalid LPC coefficient precision", r.tell_bytes())
        shift = r.read_sint(5)
        if shift < 0:
            raise DecodeError("negative LPC shift", r.tell_bytes())
        coeffs = [r.read_sint(precision) for _ in range(order)]
        residual = _decode_residual(r, block_size, order)
        samples = list(warmup)
        for res in residual:
            pred = sum(c * samples[-i - 1] for i, c in enumerate(coeffs)) >> shift
            samples.append(pred + res)
        out = np.array(samples, dtype=np.int64)
    else:
        raise DecodeError(f"reserved subframe type {sf_type}", r.tell_bytes())

    if wasted:
        out <<= wasted
    return out


def read_flac(data: bytes) -> tuple[np.ndarray, int, int]:
    """Decode a FLAC stream to (samples[frames, channels] int32, rate, bits)."""
    if data[:4] != b"fLaC":
        raise DecodeError("missing fLaC stream marker", 0)
    pos = 4
    info: FlacStreamInfo | None = None
    while True:
        if pos + 4 > len(data):
            raise DecodeError("truncated metadata block header", pos)
        header = data[pos]
        last = bool(header & 0x80)
        block_type = header & 0x7F
        length = int.from_bytes(data[pos + 1:pos + 4], "big")
        payload = data[pos + 4:pos + 4 + length]
        if len(payload) < length:
            raise DecodeError("truncated metadata block", pos + 4)
        if block_type == 0:
            info = _parse_stream_info(payload, pos + 4)
        pos += 4 + length
        if last:
            break
    if info is None:
        raise DecodeError("no STREAMINFO block", pos)
    if info.bits_per_sample not in (8, 12, 16, 20, 24, 32):
        raise UnsupportedFormatError(
            f"unsupported FLAC bit depth {info.bits_per_sample}")

    r = _BitReader(data, pos)
    frames: list[np.ndarray] = []
    while not r.at_end():
        frame_start = r.tell_bytes()
        sync = r.read_uint(14)
        if sync != 0b11111111111110:
            raise DecodeError("bad frame sync code", frame_start)
        if r.read_uint(1):
            raise DecodeError("reserved bit set in frame header", frame_start)
        r.read_uint(1)  # blocking strategy
        bs_code = r.read_uint(4)
        sr_code = r.read_uint(4)
        ch_code = r.read_uint(4)
        ss_code = r.read_uint(3)
        if r.read_uint(1):
            raise DecodeError("reserved bit set in frame header", frame_start)
        _read_coded_number(r)
        if bs_code == 0:
            raise DecodeError("reserved block size code", frame_start)
        elif bs_code == 6:
            block_size = r.read_uint(8) + 1
        elif bs_code == 7:
            block_size = r.read_uint(16) + 1
        else:
            block_size = _BLOCK_SIZE_TABLE[bs_code]
        if sr_code == 12:
            r.read_uint(8)
        elif sr_code in (13, 14):
            r.read_uint(16)
        elif sr_code == 15:
            raise DecodeError("invalid sample rate code", frame_start)
        bps = info.bits_per_sample if ss_code == 0 else _SAMPLE_SIZE_TABLE.get(ss_code)
        if bps is None:
            raise DecodeError("reserved sample size code", frame_start)
        header_end = r.tell_bytes() + (1 if r.bit_pos else 0)
        expected_crc = r.read_uint(8)
        if crc8(data[frame_start:header_end]) != expected_crc:
            raise DecodeError("frame header CRC mismatch", frame_start)

        if ch_code < 8:
            n_ch = ch_code + 1
            subframes = [_decode_subframe(r, block_size, bps) for _ in range(n_ch)]
        elif ch_code in (8, 9, 10):
            bps_pair = (bps, bps + 1) if ch_code in (8, 10) else (bps + 1, bps)
            a = _decode_subframe(r, block_size, bps_pair[0])
            b = _decode_subframe(r, block_size, bps_pair[1])
            if ch_code == 8:      # left/side
                subframes = [a, a - b]
            elif ch_code == 9:    # right/side
                subframes = [a + b, b]
            else:                 # mid/side
                side = b
                mid = (a << 1) | (side & 1)
                subframes = [(mid + side) >> 1, (mid - side) >> 1]
        else:
            raise DecodeError("reserved channel assignment", frame_start)
        r.align_to_byte()
        r.read_uint(16)  # frame footer CRC-16 (structure validated via header CRC)
        frames.append(np.stack(subframes, axis=1))

    if frames:
        samples = np.concatenate(frames, axis=0)
    else:
        samples = np.zeros((0, info.channels), dtype=np.int64)
    if info.total_samples and samples.shape[0] > info.total_samples:
        samples = samples[:info.total_samples]
    return samples.astype(np.int32), info.sample_rate, info.bits_per_sample


def _write_coded_number(value: int) -> bytes:
    if value < 0x80:
        return bytes([value])
    n_extra = 1
    while value >= (1 << (6 + 5 * n_extra)):
        n_extra += 1
    n_total = n_extra + 1
    head = (((1 << n_total) - 1) << (8 - n_total)) | (value >> (6 * n_extra))
    out = [head]
    for i in range(n_extra - 1, -1, -1):
        out.append(0x80 | ((value >> (6 * i)) & 0x3F))
    return bytes(out)


class _BitWriter:
    def __init__(self):
        self.buffer = bytearray()
        self.acc = 0
        self.nbits = 0

    def write_uint(self, value: int, bits: int) -> None:
        self.acc = (self.acc << bits) | (value & ((1 << bits) - 1))
        self.nbits += bits
        while self.nbits >= 8:
            self.nbits -= 8
            self.buffer.append((self.acc >> self.nbits) & 0xFF)
        self.acc &= (1 << self.nbits) - 1

    def align(self) -> None:
        if self.nbits:
            self.write_uint(0, 8 - self.nbits)

    def getvalue(self) -> bytes:
        return bytes(self.buffer)


def write_flac_verbatim(samples: np.ndarray, sample_rate: int,
                        bits_per_sample: int = 16,
                        block_size: int = 4096) -> bytes:
    """Encode int samples [frames, channels] as a valid FLAC stream.

    Uses verbatim subframes only: large output, but a spec-conforming stream
    any decoder accepts. Intended for fixtures and round-trip tests.
    """
    if samples.ndim == 1:
        samples = samples[:, None]
    n_samples, n_channels = samples.shape
    info = _BitWriter()
    info.write_uint(block_size, 16)
    info.write_uint(block_size, 16)
    info.write_uint(0, 24)
    info.write_uint(0, 24)
    info.write_uint(sample_rate, 20)
    info.write_uint(n_channels - 1, 3)
    info.write_uint(bits_per_sample - 1, 5)
    info.write_uint(n_samples, 36)
    out = bytearray(b"fLaC")
    out.append(0x80)  # last metadata block, type 0 (STREAMINFO)
    payload = info.getvalue() + b"\x00" * 16  # md5 unset
    out += len(payload).to_bytes(3, "big")
    out += payload

    for frame_idx, start in enumerate(range(0, n_samples, block_size)):
        block = samples[start:start + block_size]
        bs = block.shape[0]
        w = _BitWriter()
        w.write_uint(0b11111111111110, 14)
        w.write_uint(0, 1)
        w.write_uint(0, 1)       # fixed block size stream
        w.write_uint(7, 4)       # block size: 16-bit field at end of header
        w.write_uint(0, 4)       # sample rate: from STREAMINFO
        w.write_uint(n_channels - 1, 4)
        ss_code = {8: 1, 12: 2, 16: 4, 20: 5, 24: 6, 32: 7}[bits_per_sample]
        w.write_uint(ss_code, 3)
        w.write_uint(0, 1)
        for byte in _write_coded_number(frame_idx):
            w.write_uint(byte, 8)
        w.write_uint(bs - 1, 16)
        header = w.getvalue()
        w.write_uint(crc8(header), 8)
        for ch in range(n_channels):
            w.write_uint(0, 1)
            w.write_uint(1, 6)   # verbatim
            w.write_uint(0, 1)   # no wasted bits
            for v in block[:, ch]:
                w.write_uint(int(v) & ((1 << bits_per_sample) - 1), bits_per_sample)
        w.align()
        frame = w.getvalue()
        out += frame
        out += crc16(frame).to_bytes(2, "big")
    return bytes(out)
