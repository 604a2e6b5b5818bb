"""Synthetic speech-like source signals."""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .dsp import SampleBuffer
from .gcc import correlation_time

FORMANT_RANGES_HZ = ((300.0, 800.0), (900.0, 2200.0), (2200.0, 3200.0))
FORMANT_GAINS = (1.0, 0.6, 0.35)


def _resonator(x: np.ndarray, freq: float, bandwidth: float, fs: float) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2.0 * np.pi * freq / fs
    return lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], x)


def synth_speech_like(duration_s: float, seed: int, fs: float = 44100.0,
                      target_tc: tuple = (16.0, 24.0)) -> SampleBuffer:
    """Syllable-modulated formant noise with a broadband floor.

    Each syllable (4-8 Hz rate) is noise shaped by three formant resonators
    under a sin^2 envelope. A lightly low-passed noise bed follows the
    envelope with a floor, so no 100 ms stretch is silent. Its level is set
    by bisection so the correlation time hits a per-seed target drawn from
    ``target_tc`` (samples).
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    syllable = int(fs / rng.uniform(4.0, 8.0))
    voiced = np.zeros(n)
    env = np.zeros(n)
    t0 = 0
    while t0 < n:
        length = int(syllable * rng.uniform(0.8, 1.2))
        excitation = rng.standard_normal(length)
        seg = sum(g * _resonator(excitation, rng.uniform(*fr), rng.uniform(80.0, 200.0), fs)
                  for fr, g in zip(FORMANT_RANGES_HZ, FORMANT_GAINS))
        w = np.sin(np.pi * np.arange(length) / length) ** 2
        m = min(length, n - t0)
        voiced[t0:t0 + m] += (seg * w)[:m] / np.std(seg)
        env[t0:t0 + m] += w[:m]
        t0 += length
    bed = lfilter([0.45], [1.0, -0.55], rng.standard_normal(n))
    bed *= (0.1 + env) / np.std(bed)

    target = rng.uniform(*target_tc)
    lo, hi = 0.0, 4.0
    for _ in range(24):
        g = 0.5 * (lo + hi)
        if correlation_time(voiced + g * bed) > target:
            lo = g
        else:
            hi = g
    x = voiced + 0.5 * (lo + hi) * bed
    return SampleBuffer(x / np.max(np.abs(x)), fs)
