"""Frequency-sliding GCC: sub-band GCCs stacked into an L x N matrix.

Row l is the inverse DFT of the PHAT spectrum shifted down by l*M bins and
weighted by a symmetric spectral window centred on bin 0. Window bins whose
absolute frequency lands above Nyquist are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import fft
from .gcc import phat_spectrum, restricted_argmax


@dataclass(frozen=True)
class FsGccConfig:
    dft_length: int = 2048
    window_support: int = 128
    hop: int = 29
    band_count: int = 32
    window_shape: str = "hann"

    def __post_init__(self):
        n, b = self.dft_length, self.window_support
        if n < 2 or n & (n - 1):
            raise ValueError("dft_length must be a power of two")
        if not 1 <= b <= n:
            raise ValueError(f"window_support must lie in [1, {n}], got {b}")
        if self.hop < 1 or self.band_count < 1:
            raise ValueError("hop and band_count must be >= 1")
        if (self.band_count - 1) * self.hop > n // 2:
            raise ValueError("band centres run past the Nyquist bin")
        if self.window_shape not in ("hann", "rect"):
            raise ValueError(f"unknown window shape {self.window_shape!r}")

    @classmethod
    def auto(cls, dft_length: int = 2048, window_support: int = 128, hop: int = 29,
             window_shape: str = "hann") -> "FsGccConfig":
        return cls(dft_length, window_support, hop,
                   auto_band_count(dft_length, window_support, hop), window_shape)


def auto_band_count(dft_length: int, window_support: int, hop: int) -> int:
    """Bands needed to reach Nyquist, floor((pi - B_phi + M_phi) / M_phi).

    B_phi is the half-width of the window in radians (B = 2 B_phi N / 2pi)
    and M_phi the hop in radians (M = M_phi N / 2pi).
    """
    b_phi = np.pi * window_support / dft_length
    m_phi = 2 * np.pi * hop / dft_length
    return int(np.floor((np.pi - b_phi + m_phi) / m_phi + 1e-12))


@dataclass(frozen=True)
class FsGccMatrix:
    entries: np.ndarray  # (..., L, N) complex, zero lag at column N/2
    config: FsGccConfig

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.entries)


def window_offsets(support: int, n: int) -> np.ndarray:
    """Signed bin offsets carrying non-zero window weight.

    Odd support is centred on bin 0. Even support below n is the mirror pair
    set {+-1, ..., +-support/2}, the only symmetric choice with exactly
    ``support`` bins. support == n covers every bin.
    """
    if support == n:
        return np.arange(-(n // 2), n - n // 2)
    if support % 2:
        h = support // 2
        return np.arange(-h, h + 1)
    h = support // 2
    return np.concatenate([np.arange(-h, 0), np.arange(1, h + 1)])


def _shape_values(offsets: np.ndarray, shape: str) -> np.ndarray:
    if shape == "rect":
        return np.ones(len(offsets))
    h = np.max(np.abs(offsets))
    w = 0.5 * (1.0 + np.cos(np.pi * offsets / (h + 1)))
    return w / w.max()


def spectral_window(config: FsGccConfig) -> np.ndarray:
    """Length-N window, bin k holding the weight of signed offset k (mod N)."""
    n = config.dft_length
    off = window_offsets(config.window_support, n)
    phi = np.zeros(n)
    phi[off % n] = _shape_values(off, config.window_shape)
    return phi


@lru_cache(maxsize=16)
def _band_layout(config: FsGccConfig):
    """Per-band source bin indices and weights, both shaped (L, B)."""
    n = config.dft_length
    off = window_offsets(config.window_support, n)
    w = _shape_values(off, config.window_shape)
    shift = config.hop * np.arange(config.band_count)[:, None]
    absolute = off[None, :] + shift
    weights = np.where(absolute > n // 2, 0.0, w[None, :])
    weights.setflags(write=False)
    src = absolute % n
    dst = np.broadcast_to(off % n, src.shape)
    return src, dst, weights


def fs_gcc_from_phat(psi: np.ndarray, config: FsGccConfig) -> np.ndarray:
    """FS-GCC entries from a PHAT spectrum (any leading batch dims)."""
    n = config.dft_length
    if psi.shape[-1] != n:
        raise ValueError(f"spectrum length {psi.shape[-1]} != dft_length {n}")
    src, dst, weights = _band_layout(config)
    lead = psi.shape[:-1]
    banded = np.zeros(lead + (config.band_count, n), dtype=np.complex128)
    rows = np.arange(config.band_count)[:, None]
    banded[..., rows, dst] = psi[..., src] * weights
    return np.fft.fftshift(fft(banded, inverse=True, axis=-1), axes=-1)


def fs_gcc(x1_spec, x2_spec, config: FsGccConfig = FsGccConfig()) -> FsGccMatrix:
    return FsGccMatrix(fs_gcc_from_phat(phat_spectrum(x1_spec, x2_spec), config), config)


def crop_lags(matrix: np.ndarray, width: int) -> np.ndarray:
    """Central ``width`` lag columns (zero lag stays at column width/2)."""
    n = matrix.shape[-1]
    start = n // 2 - width // 2
    return matrix[..., start:start + width]


def band_average(magnitude: np.ndarray) -> np.ndarray:
    return np.asarray(magnitude, dtype=np.float64).mean(axis=-2)


def band_average_tdoa(magnitude: np.ndarray, max_lag: int) -> int:
    """Lag maximising the band-averaged magnitude within |lag| <= max_lag."""
    mag = np.asarray(magnitude)
    if mag.ndim != 2:
        raise ValueError("expected an L x N matrix")
    return restricted_argmax(band_average(mag), max_lag)
