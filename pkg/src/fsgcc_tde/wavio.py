"""Minimal RIFF/WAVE reader and writer (PCM 8/16/24/32-bit and IEEE float)."""

from __future__ import annotations

import struct
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .dsp import SampleBuffer

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _parse(data: bytes):
    if len(data) < 12:
        raise WavFormatError("file shorter than a RIFF header", len(data))
    if data[0:4] != b"RIFF":
        raise WavFormatError("missing RIFF tag", 0)
    if data[8:12] != b"WAVE":
        raise WavFormatError("missing WAVE tag", 8)
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            if cid == b"data":
                size = len(data) - body  # tolerate streamed files with a bogus size
            else:
                raise WavFormatError(f"chunk {cid!r} runs past end of file", pos)
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too short", pos)
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == WAVE_FORMAT_EXTENSIBLE and size >= 40:
                (tag,) = struct.unpack_from("<H", data, body + 24)
            fmt = (tag, channels, rate, block_align, bits, pos)
        elif cid == b"data":
            payload = (body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise WavFormatError("no fmt chunk", pos)
    if payload is None:
        raise WavFormatError("no data chunk", pos)
    return fmt, payload


def read_wav(path) -> tuple[np.ndarray, int]:
    """Returns (samples as float64 in [-1, 1], shape (frames, channels), sample rate)."""
    data = Path(path).read_bytes()
    (tag, channels, rate, block_align, bits, fmt_pos), (start, size) = _parse(data)
    if channels < 1 or rate < 1:
        raise WavFormatError("invalid channel count or sample rate", fmt_pos + 10)
    width = bits // 8
    if width * channels != block_align:
        raise WavFormatError("block_align disagrees with bits per sample", fmt_pos + 20)
    n = size // block_align
    raw = data[start:start + n * block_align]
    if tag == WAVE_FORMAT_PCM:
        if bits == 8:
            x = (np.frombuffer(raw, np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(raw, "<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            b = np.frombuffer(raw, np.uint8).reshape(-1, 3).astype(np.int32)
            v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            x = v.astype(np.float64) / float(1 << 23)
        elif bits == 32:
            x = np.frombuffer(raw, "<i4").astype(np.float64) / 2147483648.0
        else:
            raise WavFormatError(f"unsupported PCM width {bits}", fmt_pos + 22)
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            x = np.frombuffer(raw, "<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(raw, "<f8").astype(np.float64)
        else:
            raise WavFormatError(f"unsupported float width {bits}", fmt_pos + 22)
    else:
        raise WavFormatError(f"unsupported format tag {tag}", fmt_pos + 8)
    return x.reshape(n, channels), rate


def load_wav(path, target_fs: float | None = None) -> SampleBuffer:
    """First channel, peak-normalised to 1, resampled to ``target_fs`` when given."""
    x, rate = read_wav(path)
    x = x[:, 0]
    if target_fs is not None and int(target_fs) != rate:
        g = gcd(int(target_fs), rate)
        x = resample_poly(x, int(target_fs) // g, rate // g)
        rate = int(target_fs)
    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak > 0:
        x = x / peak
    return SampleBuffer(x, float(rate))


def write_wav(path, samples, sample_rate: int, bits: int = 16) -> None:
    """Mono WAV; 16-bit PCM or 32-bit float."""
    x = np.asarray(samples, dtype=np.float64)
    if bits == 16:
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, payload = WAVE_FORMAT_PCM, q.tobytes()
    elif bits == 32:
        tag, payload = WAVE_FORMAT_IEEE_FLOAT, x.astype("<f4").tobytes()
    else:
        raise ValueError("bits must be 16 or 32")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, int(sample_rate), int(sample_rate) * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\0"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
