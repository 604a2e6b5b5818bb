"""Per-frame TDoA estimation for every method and per-cell metric tables."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetManifest, frame_spectra
from .fsgcc import FsGccConfig, band_average, crop_lags, fs_gcc_from_phat
from .gcc import gcc_from_phat, phat_spectrum, restricted_argmax
from .lowrank import svd, wsvd_weights
from .metrics import METHODS, Accumulator, MetricsSummary, TdeRecord, default_guard, peak_snr
from .parallel import pmap
from .unet import UNetModel, denoise

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "t60", "snr", "P_pct", "rho_db", "mae", "sdae", "n", "room")


def parse_methods(text: str | None) -> tuple[str, ...]:
    if text is None or text == "all":
        return METHODS
    names = tuple(m.strip() for m in text.split(",") if m.strip())
    unknown = [m for m in names if m not in METHODS]
    if unknown or not names:
        raise ValueError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    return tuple(m for m in METHODS if m in names)


@dataclass
class FrameEstimates:
    """Per-method (estimate, peak SNR) for a stack of frames."""

    tdoa: dict
    rho: dict


def _estimate(values: np.ndarray, max_lag: int, guard: int) -> tuple[int, float]:
    lag = restricted_argmax(values, max_lag)
    return lag, peak_snr(values, lag, guard)


def estimate_frames(frames: np.ndarray, max_lag: int, tc: float, methods, config: FsGccConfig,
                    crop_width: int, model: UNetModel | None = None) -> FrameEstimates:
    """Estimates for frames shaped (n, 2, N).

    Peak SNR is measured for every method over the same ``crop_width``
    central lags so the methods are compared on equal footing.
    """
    if "cnn" in methods and model is None:
        raise ValueError("the cnn method needs a trained model")
    guard = default_guard(tc)
    spec = frame_spectra(frames)
    psi = phat_spectrum(spec[:, 0], spec[:, 1])
    tdoa = {m: [] for m in methods}
    rho = {m: [] for m in methods}
    if "gcc" in methods:
        g = crop_lags(gcc_from_phat(psi), crop_width)
        for row in g:
            lag, r = _estimate(row, max_lag, guard)
            tdoa["gcc"].append(lag)
            rho["gcc"].append(r)
    if not {"svd", "wsvd", "cnn"} & set(methods):
        return FrameEstimates(tdoa, rho)
    fs = fs_gcc_from_phat(psi, config)
    if "svd" in methods or "wsvd" in methods:
        for mat in fs:
            f = svd(mat)
            u1, s1, v1 = f.u[:, 0], f.singular_values[0], f.v[:, 0]
            rank1 = np.abs(s1 * np.outer(u1, crop_lags(v1.conj(), crop_width)))
            if "svd" in methods:
                lag, r = _estimate(band_average(rank1), max_lag, guard)
                tdoa["svd"].append(lag)
                rho["svd"].append(r)
            if "wsvd" in methods:
                lag, r = _estimate(band_average(wsvd_weights(u1)[:, None] * rank1), max_lag, guard)
                tdoa["wsvd"].append(lag)
                rho["wsvd"].append(r)
    if "cnn" in methods:
        out = denoise(model, np.abs(crop_lags(fs, crop_width)))
        for mat in out:
            avg = band_average(mat)
            if not np.any(avg):
                log.warning("network output is all zero; estimating zero lag")
                avg = np.zeros_like(avg)
                avg[len(avg) // 2] = 1.0
            lag, r = _estimate(avg, max_lag, guard)
            tdoa["cnn"].append(lag)
            rho["cnn"].append(r)
    return FrameEstimates(tdoa, rho)


def _cell_key(rec) -> tuple:
    return rec["room"], float(rec["t60"]), rec["snr_db"]


def _eval_record(args):
    manifest, rec, methods, model, config, crop = args
    frames = manifest.read(rec["frames"], rec["shape"])
    est = estimate_frames(frames, rec["max_lag"], rec["correlation_time"], methods, config, crop, model)
    accs = {}
    for m in methods:
        acc = Accumulator()
        for lag, r in zip(est.tdoa[m], est.rho[m]):
            acc.add(TdeRecord(rec["true_tdoa"], lag, r, rec["correlation_time"], m))
        accs[m] = acc
    return accs


def evaluate_dataset(manifest: DatasetManifest, methods, model: UNetModel | None = None,
                     workers: int | None = None) -> dict:
    """{(room, t60, snr, method): MetricsSummary} over every test record."""
    cfg = manifest.run_config().experiment
    if not manifest.test:
        raise ValueError("dataset has no test records")
    jobs = [(manifest, rec, methods, model, cfg.fsgcc, cfg.crop_width) for rec in manifest.test]
    results = pmap(_eval_record, jobs, workers)
    cells: dict = {}
    for rec, accs in zip(manifest.test, results):
        key = _cell_key(rec)
        for m, acc in accs.items():
            prev = cells.get(key + (m,))
            cells[key + (m,)] = acc if prev is None else prev.merge(acc)
    return {k: v.summary() for k, v in cells.items()}


def _fmt(x) -> str:
    if x is None:
        return "inf"
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def ordered_cells(summaries: dict) -> list:
    """Rows sorted by room (manifest order kept by the caller), method order, then T60."""
    def snr_key(s):
        return math.inf if s is None else s
    rooms = list(dict.fromkeys(k[0] for k in summaries))
    return sorted(summaries, key=lambda k: (rooms.index(k[0]), METHODS.index(k[3]), k[1],
                                            snr_key(k[2])))


def summaries_to_csv(summaries: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for key in ordered_cells(summaries):
        room, t60, snr, method = key
        s: MetricsSummary = summaries[key]
        w.writerow([method, _fmt(t60), _fmt(snr), _fmt(s.anomalous_pct), _fmt(s.mean_peak_snr),
                    _fmt(s.mae_na), _fmt(s.sdae_na), s.count_total, room])
    return buf.getvalue()


def read_results_csv(text: str) -> list[dict]:
    """Parse a results table; errors name the offending row (1 = header)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("row 1: empty CSV") from None
    need = CSV_COLUMNS[:8]
    if tuple(header[:8]) != need:
        raise ValueError(f"row 1: expected columns {','.join(need)}")
    rows = []
    for i, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < 8:
            raise ValueError(f"row {i}: expected at least 8 fields, got {len(row)}")
        try:
            rec = {"method": row[0], "t60": float(row[1]), "snr": float(row[2]),
                   "P_pct": float(row[3]), "rho_db": float(row[4]), "mae": float(row[5]),
                   "sdae": float(row[6]), "n": int(row[7]),
                   "room": row[8] if len(row) > 8 else ""}
        except ValueError as exc:
            raise ValueError(f"row {i}: {exc}") from None
        if rec["method"] not in METHODS:
            raise ValueError(f"row {i}: unknown method {rec['method']!r}")
        rows.append(rec)
    return rows


@dataclass(frozen=True)
class OrderingCheck:
    room: str
    t60: float
    rule: str
    lhs: float
    rhs: float
    ok: bool

    def line(self) -> str:
        mark = "ok  " if self.ok else "FAIL"
        return f"{mark} {self.room:>8} T60={self.t60:<4g} {self.rule:<28} {self.lhs:8.3f} vs {self.rhs:8.3f}"


def ordering_checks(rows: list[dict], margin_pct: float = 2.0, from_t60: float = 0.5) -> list[OrderingCheck]:
    """Per reverberant cell: the CNN against WSVD and GCC on P and rho.

    Cells without a CNN row, or without both baselines, are skipped.
    """
    cells: dict = {}
    for r in rows:
        if r["t60"] > 0:
            cells.setdefault((r["room"], r["t60"]), {})[r["method"]] = r
    out = []
    for (room, t60), m in cells.items():
        if not {"cnn", "wsvd", "gcc"} <= m.keys():
            continue
        cnn, wsvd, gcc = m["cnn"], m["wsvd"], m["gcc"]
        out.append(OrderingCheck(room, t60, f"P(cnn) <= P(wsvd) + {margin_pct:g}", cnn["P_pct"],
                                 wsvd["P_pct"] + margin_pct, cnn["P_pct"] <= wsvd["P_pct"] + margin_pct))
        if t60 >= from_t60:
            out.append(OrderingCheck(room, t60, "P(cnn) < P(gcc)", cnn["P_pct"], gcc["P_pct"],
                                     cnn["P_pct"] < gcc["P_pct"]))
        out.append(OrderingCheck(room, t60, "rho(cnn) >= rho(gcc)", cnn["rho_db"], gcc["rho_db"],
                                 cnn["rho_db"] >= gcc["rho_db"]))
    return out
