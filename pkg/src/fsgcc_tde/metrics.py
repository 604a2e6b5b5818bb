"""Anomaly rate, peak SNR, MAE and SDAE over TDoA estimates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .gcc import centered_lags

log = logging.getLogger(__name__)

METHODS = ("gcc", "svd", "wsvd", "cnn")


@dataclass(frozen=True)
class TdeRecord:
    true_tdoa: int
    estimated_tdoa: int
    peak_snr_db: float
    correlation_time: float
    method_tag: str = "gcc"

    def __post_init__(self):
        if not self.correlation_time > 0:
            raise ValueError("correlation_time must be positive")
        if self.method_tag not in METHODS:
            raise ValueError(f"unknown method {self.method_tag!r}")

    @property
    def abs_error(self) -> int:
        return abs(self.true_tdoa - self.estimated_tdoa)


@dataclass(frozen=True)
class MetricsSummary:
    anomalous_pct: float
    mean_peak_snr: float  # nan when undefined
    mae_na: float
    sdae_na: float
    count_total: int
    count_anomalous: int

    @property
    def defined(self) -> bool:
        return self.count_total > self.count_anomalous


def is_anomalous(record: TdeRecord) -> bool:
    return record.abs_error > record.correlation_time / 2.0


def peak_snr(values, peak_lag: int, guard: int) -> float:
    """20 log10(|peak| / RMS of lags outside peak +- guard), in dB.

    ``values`` is a zero-lag-centred lag sequence. Returns +inf when the
    off-peak region is identically zero.
    """
    v = np.asarray(values, dtype=np.float64)
    lags = centered_lags(len(v))
    idx = np.flatnonzero(lags == peak_lag)
    if len(idx) == 0:
        raise ValueError(f"peak lag {peak_lag} out of range")
    off = v[np.abs(lags - peak_lag) > guard]
    rms = math.sqrt(np.mean(off ** 2)) if len(off) else 0.0
    peak = abs(v[idx[0]])
    if rms == 0.0:
        log.info("zero off-peak level; peak SNR reported as +inf")
        return math.inf
    if peak == 0.0:
        return -math.inf
    return 20.0 * math.log10(peak / rms)


def default_guard(correlation_time: float) -> int:
    return int(math.ceil(correlation_time / 2.0))


@dataclass
class Accumulator:
    """Mergeable running sums behind a MetricsSummary."""

    total: int = 0
    anomalous: int = 0
    n_na: int = 0
    sum_err: float = 0.0
    sum_err2: float = 0.0
    sum_rho: float = 0.0

    def add(self, record: TdeRecord) -> None:
        self.total += 1
        if is_anomalous(record):
            self.anomalous += 1
            return
        e = float(record.abs_error)
        self.n_na += 1
        self.sum_err += e
        self.sum_err2 += e * e
        self.sum_rho += record.peak_snr_db

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(self.total + other.total, self.anomalous + other.anomalous,
                           self.n_na + other.n_na, self.sum_err + other.sum_err,
                           self.sum_err2 + other.sum_err2, self.sum_rho + other.sum_rho)

    def summary(self) -> MetricsSummary:
        if self.total == 0:
            raise ValueError("no records to summarise")
        pct = 100.0 * self.anomalous / self.total
        if self.n_na == 0:
            log.warning("every estimate is anomalous; MAE/SDAE/rho undefined")
            return MetricsSummary(pct, math.nan, math.nan, math.nan, self.total, self.anomalous)
        mae = self.sum_err / self.n_na
        var = max(self.sum_err2 / self.n_na - mae * mae, 0.0)
        return MetricsSummary(pct, self.sum_rho / self.n_na, mae, math.sqrt(var),
                              self.total, self.anomalous)


def summarize(records: Iterable[TdeRecord]) -> MetricsSummary:
    acc = Accumulator()
    for r in records:
        acc.add(r)
    return acc.summary()
