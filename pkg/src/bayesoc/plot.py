"""Minimal hand-written SVG line plots with credible ribbons."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=64, right=150, top=36, bottom=52)


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    return np.arange(np.ceil(lo / step) * step, hi + step * 1e-9, step)


def curve_svg(series: Sequence[dict], title: str = "", xlabel: str = "n", ylabel: str = "",
              hlines: Sequence[float] = (), crossings: Sequence[tuple] = (),
              ylim: Optional[tuple] = None) -> str:
    """Render curves as SVG text.

    Each series is ``{"label", "x", "median", "lo", "hi"}`` (``lo``/``hi``
    optional). ``crossings`` are ``(x, label)`` pairs drawn as dashed
    vertical lines; ``hlines`` are dashed horizontal reference lines.
    """
    xs = np.concatenate([np.asarray(s["x"], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = [np.asarray(s[k], float) for s in series for k in ("median", "lo", "hi") if s.get(k) is not None]
    ys = np.concatenate(ys + [np.asarray(hlines, float)]) if ys else np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = ylim if ylim else (float(min(ys.min(), 0.0)), float(ys.max()) * 1.05 or 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + ph - (np.asarray(y, float) - y0) / (y1 - y0) * ph

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x), sy(y)))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    left, top, bottom = MARGIN["left"], MARGIN["top"], MARGIN["top"] + ph
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for t in _ticks(x0, x1):
        X = float(sx(t))
        out.append(f'<line x1="{X:.2f}" y1="{bottom}" x2="{X:.2f}" y2="{bottom + 4}" stroke="#444"/>')
        out.append(f'<text x="{X:.2f}" y="{bottom + 17}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        Y = float(sy(t))
        out.append(f'<line x1="{left - 4}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 7}" y="{Y + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for h in hlines:
        Y = float(sy(h))
        out.append(f'<line x1="{left}" y1="{Y:.2f}" x2="{left + pw}" y2="{Y:.2f}" '
                   f'stroke="#888" stroke-dasharray="4 3"/>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        x = np.asarray(s["x"], float)
        order = np.argsort(x)
        x = x[order]
        if s.get("lo") is not None and s.get("hi") is not None:
            lo = np.asarray(s["lo"], float)[order]
            hi = np.asarray(s["hi"], float)[order]
            ribbon = pts(np.r_[x, x[::-1]], np.r_[hi, lo[::-1]])
            out.append(f'<polygon points="{ribbon}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        med = np.asarray(s["median"], float)[order]
        dash = ' stroke-dasharray="6 4"' if s.get("dashed") else ""
        out.append(f'<polyline points="{pts(x, med)}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly}">{escape(str(s.get("label", "")))}</text>')
    for x, label in crossings:
        X = float(sx(x))
        out.append(f'<line x1="{X:.2f}" y1="{top}" x2="{X:.2f}" y2="{bottom}" stroke="#333" '
                   f'stroke-dasharray="3 3"/>')
        out.append(f'<text x="{X + 3:.2f}" y="{top + 12}" font-size="10">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def series_from_estimates(estimates, label: str, dashed: bool = False) -> dict:
    return {"label": label, "x": [e.n for e in estimates], "median": [e.summary.median for e in estimates],
            "lo": [e.summary.lo for e in estimates], "hi": [e.summary.hi for e in estimates],
            "dashed": dashed}


def write_svg(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(curve_svg(*args, **kwargs))
    return path
