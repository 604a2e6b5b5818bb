"""FFT, windowing and STFT primitives.

Everything here is float64/complex128 and side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SampleBuffer:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("SampleBuffer holds a 1-D signal")
        if not np.all(np.isfinite(x)):
            raise ValueError("SampleBuffer samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class StftFrameSet:
    """STFT frames stored as a (n_frames, frame_length) complex array."""

    frames: np.ndarray
    frame_length: int
    hop: int
    window_kind: str
    truncated: bool = field(default=False)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def empty(self) -> bool:
        return self.frames.shape[0] == 0


def fft(buffer, inverse: bool = False, axis: int = -1) -> np.ndarray:
    """Power-of-two DFT along ``axis``; the inverse carries the 1/N factor."""
    x = np.asarray(buffer, dtype=np.complex128)
    n = x.shape[axis]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    return np.fft.ifft(x, axis=axis) if inverse else np.fft.fft(x, axis=axis)


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window with zero endpoints."""
    if n < 2:
        raise ValueError("hann_window needs n >= 2")
    i = np.arange(n)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))
    # enforce exact mirror symmetry against rounding in cos
    return 0.5 * (w + w[::-1])


def get_window(kind: str, n: int) -> np.ndarray:
    if kind == "hann":
        return hann_window(n)
    if kind in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    raise ValueError(f"unknown window kind {kind!r}")


def frame_count(n_samples: int, frame_length: int, hop: int) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // hop + 1


def hop_from_overlap(frame_length: int, overlap_fraction: float) -> int:
    if not 0 <= overlap_fraction < 1:
        raise ValueError("overlap_fraction must lie in [0, 1)")
    return max(1, int(round(frame_length * (1.0 - overlap_fraction))))


def frame_signal(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    """Strided (n_frames, frame_length) view; the trailing partial frame is dropped."""
    n = frame_count(len(x), frame_length, hop)
    if n == 0:
        return np.zeros((0, frame_length))
    return np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop][:n]


def stft(buffer: SampleBuffer, frame_length: int = 2048, overlap_fraction: float = 0.75,
         window_kind: str = "hann") -> StftFrameSet:
    if not is_power_of_two(frame_length):
        raise ValueError("frame_length must be a power of two")
    hop = hop_from_overlap(frame_length, overlap_fraction)
    frames = frame_signal(buffer.samples, frame_length, hop)
    if frames.shape[0] == 0:
        return StftFrameSet(np.zeros((0, frame_length), dtype=np.complex128),
                            frame_length, hop, window_kind, truncated=True)
    spectra = fft(frames * get_window(window_kind, frame_length), axis=-1)
    return StftFrameSet(spectra, frame_length, hop, window_kind)
