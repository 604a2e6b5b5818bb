"""Static SVG line charts of metric-versus-T60 tables."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .metrics import METHODS

log = logging.getLogger(__name__)

PANELS = (("P_pct", "Anomalous estimates P (%)"),
          ("rho_db", "Peak SNR rho (dB, nonanomalous)"),
          ("mae", "MAE (samples, nonanomalous)"),
          ("sdae", "SDAE (samples, nonanomalous)"))
COLORS = {"gcc": "#1f77b4", "svd": "#d62728", "wsvd": "#2ca02c", "cnn": "#9467bd"}
LABELS = {"gcc": "Conv. GCC", "svd": "SVD FS-GCC", "wsvd": "WSVD FS-GCC", "cnn": "CNN FS-GCC"}
WIDTH, HEIGHT = 480, 340
LEFT, RIGHT, TOP, BOTTOM = 64, 20, 36, 48


def nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    """Round tick values spanning [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    if ticks[-1] < hi:
        ticks.append(round(v, 12))
    return ticks


def _fmt_tick(v: float) -> str:
    return f"{v:.6g}"


def line_chart(title: str, ylabel: str, series: dict) -> str:
    """``series`` maps method -> [(t60, value)]; non-finite points are dropped."""
    pts = {m: [(x, y) for x, y in s if math.isfinite(y)] for m, s in series.items()}
    xs = [x for s in pts.values() for x, _ in s]
    ys = [y for s in pts.values() for _, y in s]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    xt = nice_ticks(min(xs), max(xs))
    yt = nice_ticks(min(ys), max(ys))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<g class="axes" data-xmin="{_fmt_tick(x0)}" data-xmax="{_fmt_tick(x1)}" '
           f'data-ymin="{_fmt_tick(y0)}" data-ymax="{_fmt_tick(y1)}">',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in xt:
        out.append(f'<line x1="{sx(v):.2f}" y1="{TOP + ph}" x2="{sx(v):.2f}" y2="{TOP + ph + 4}" '
                   f'stroke="black"/><text x="{sx(v):.2f}" y="{TOP + ph + 16}" '
                   f'text-anchor="middle">{_fmt_tick(v)}</text>')
    for v in yt:
        out.append(f'<line x1="{LEFT - 4}" y1="{sy(v):.2f}" x2="{LEFT + pw}" y2="{sy(v):.2f}" '
                   f'stroke="#dddddd"/><text x="{LEFT - 6}" y="{sy(v) + 4:.2f}" '
                   f'text-anchor="end">{_fmt_tick(v)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">T60 (s)</text>')
    out.append(f'<text transform="translate(14 {TOP + ph / 2:.2f}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    out.append("</g>")
    for i, (method, s) in enumerate(pts.items()):
        color = COLORS.get(method, "black")
        s = sorted(s)
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<g class="series" data-method="{method}">')
        if len(s) > 1:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, y in s:
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}" '
                       f'data-x="{x:.6g}" data-y="{y:.6g}"/>')
        ly = TOP + 12 + 14 * i
        out.append(f'<line x1="{LEFT + 8}" y1="{ly}" x2="{LEFT + 24}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/><text x="{LEFT + 28}" y="{ly + 4}">'
                   f'{escape(LABELS.get(method, method))}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _snr_tag(snr: float) -> str:
    return "inf" if math.isinf(snr) else f"{snr:g}"


def write_report(rows: list[dict], out_dir) -> list[Path]:
    """Four charts per (room, SNR) group. Returns the written paths."""
    out_dir = Path(out_dir)
    if not rows:
        log.warning("results table has no method rows; no plots written")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["room"], r["snr"]), []).append(r)
    written = []
    for (room, snr), grp in groups.items():
        suffix = "".join(f"_{p}" for p in (room, f"snr{_snr_tag(snr)}") if p)
        methods = [m for m in METHODS if any(r["method"] == m for r in grp)]
        for key, label in PANELS:
            series = {m: [(r["t60"], r[key]) for r in grp if r["method"] == m] for m in methods}
            title = f"{label.split(' (')[0]} vs T60" + (f", room {room}" if room else "") + \
                f", SNR {_snr_tag(snr)} dB"
            path = out_dir / f"{key}{suffix}.svg"
            path.write_text(line_chart(title, label, series))
            written.append(path)
    return written
