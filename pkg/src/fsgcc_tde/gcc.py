"""GCC-PHAT and peak picking."""

from __future__ import annotations

import logging
import math

import numpy as np

from .dsp import SampleBuffer, fft, is_power_of_two

log = logging.getLogger(__name__)

PHAT_EPS = 1e-12


class DegenerateInput(ValueError):
    """All-zero correlation: no lag can be chosen."""


def phat_spectrum(x1_spec, x2_spec) -> np.ndarray:
    """Unit-modulus cross-power spectrum X1 conj(X2) / |X1 X2|.

    Works on the last axis, so stacks of frames can be passed at once.
    Bins where either input vanishes map to 0.
    """
    x1 = np.asarray(x1_spec, dtype=np.complex128)
    x2 = np.asarray(x2_spec, dtype=np.complex128)
    if x1.shape != x2.shape:
        raise ValueError("spectra must have equal length")
    cross = x1 * np.conj(x2)
    mag = np.abs(cross)
    out = cross / (mag + PHAT_EPS)
    out[mag == 0] = 0.0
    return out


def centered_lags(n: int) -> np.ndarray:
    """Lag value of each index of a zero-lag-centred correlation of length n."""
    return np.arange(n) - n // 2


def gcc_from_phat(psi: np.ndarray) -> np.ndarray:
    r = fft(psi, inverse=True, axis=-1)
    return np.fft.fftshift(r.real, axes=-1)


def gcc_phat(x1, x2, window: np.ndarray | None = None) -> np.ndarray:
    """GCC-PHAT of two equal-length frames, zero lag at index N/2.

    An all-zero frame gives an all-zero vector (and a warning).
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ValueError("frames must have the same length")
    if not is_power_of_two(x1.shape[-1]):
        raise ValueError("frame length must be a power of two")
    if window is not None:
        x1, x2 = x1 * window, x2 * window
    if not np.any(x1) or not np.any(x2):
        log.warning("degenerate all-zero frame in gcc_phat")
        return np.zeros(x1.shape)
    return gcc_from_phat(phat_spectrum(fft(x1), fft(x2)))


def restricted_argmax(values: np.ndarray, max_lag: int) -> int:
    """Lag of the maximum of a centred lag sequence within |lag| <= max_lag.

    Ties go to the smallest |lag|, then to the negative lag.
    Raises DegenerateInput for an all-zero sequence.
    """
    values = np.asarray(values)
    n = values.shape[-1]
    if max_lag > n // 2:
        raise ValueError(f"max_lag {max_lag} exceeds N/2 = {n // 2}")
    if not np.any(values):
        raise DegenerateInput("all-zero correlation")
    lags = centered_lags(n)
    sel = np.abs(lags) <= max_lag
    v, lg = values[sel], lags[sel]
    best = v.max()
    cand = lg[v == best]
    # order: |lag| ascending, negative first
    return int(sorted(cand.tolist(), key=lambda t: (abs(t), t))[0])


def estimate_tdoa_gcc(gcc: np.ndarray, max_lag: int) -> int:
    return restricted_argmax(gcc, max_lag)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Non-negative-lag autocorrelation normalised to 1 at lag 0."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    r = np.fft.irfft(np.abs(spec) ** 2, nfft)[:n]
    return r / r[0]


def correlation_time(signal: SampleBuffer | np.ndarray) -> float:
    """Full width at half maximum of the normalised autocorrelation, in samples.

    The half-maximum crossing is linearly interpolated between samples, and
    the width is twice the one-sided crossing lag.
    """
    x = signal.samples if isinstance(signal, SampleBuffer) else np.asarray(signal, dtype=float)
    if not np.any(x):
        raise ValueError("silent signal has no correlation time")
    peak = np.max(np.abs(x))
    x = x - x.mean()
    if np.max(np.abs(x)) <= 1e-12 * peak:
        raise ValueError("constant signal: autocorrelation never decays")
    r = autocorrelation(x)
    below = np.flatnonzero(r < 0.5)
    if len(below) == 0:
        raise ValueError("autocorrelation never drops below half its peak")
    k = int(below[0])
    # r[k-1] >= 0.5 > r[k]
    frac = (r[k - 1] - 0.5) / (r[k - 1] - r[k])
    return 2.0 * (k - 1 + frac)


def default_max_lag(mic_spacing_m: float, fs: float, c: float = 343.0) -> int:
    return int(math.ceil(mic_spacing_m * fs / c)) + 2
