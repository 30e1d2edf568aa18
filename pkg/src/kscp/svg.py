"""Self-contained SVG line and band plots (no plotting library)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 36, 52
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


class _Frame:
    def __init__(self, xs, ys):
        xs = np.asarray([v for v in xs if math.isfinite(v)], dtype=float)
        ys = np.asarray([v for v in ys if math.isfinite(v)], dtype=float)
        self.x0, self.x1 = _span(xs)
        self.y0, self.y1 = _span(ys)

    def px(self, x):
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y):
        return H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)


def _span(v):
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def _axes(fr: _Frame, title, xlabel, ylabel) -> list[str]:
    out = [
        f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
        'fill="none" stroke="#333"/>',
        f'<text x="{W / 2:.0f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{(LEFT + W - RIGHT) / 2:.0f}" y="{H - 12}" text-anchor="middle" font-size="13">'
        f'{escape(xlabel)}</text>',
        f'<text x="16" y="{(TOP + H - BOTTOM) / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2:.0f})">{escape(ylabel)}</text>',
    ]
    for t in np.linspace(fr.x0, fr.x1, 5):
        out.append(f'<text x="{fr.px(t):.1f}" y="{H - BOTTOM + 16}" text-anchor="middle" '
                   f'font-size="11">{t:.3g}</text>')
    for t in np.linspace(fr.y0, fr.y1, 5):
        out.append(f'<text x="{LEFT - 6}" y="{fr.py(t) + 4:.1f}" text-anchor="end" font-size="11">{t:.3g}</text>')
    return out


def _wrap(body: list[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            'font-family="sans-serif">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def _path(fr, xs, ys) -> str:
    pts = [f"{fr.px(x):.2f},{fr.py(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y)]
    return " ".join(pts)


def line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", hline=None) -> str:
    """``series`` maps a legend label to ``(xs, ys)``."""
    allx = [v for xs, _ in series.values() for v in xs]
    ally = [v for _, ys in series.values() for v in ys] + ([hline] if hline is not None else [])
    fr = _Frame(allx, ally)
    body = _axes(fr, title, xlabel, ylabel)
    if hline is not None:
        y = fr.py(hline)
        body.append(f'<line x1="{LEFT}" x2="{W - RIGHT}" y1="{y:.1f}" y2="{y:.1f}" stroke="#999" '
                    'stroke-dasharray="4 3"/>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{_path(fr, xs, ys)}"/>')
        for x, y in zip(xs, ys):
            if math.isfinite(y):
                body.append(f'<circle cx="{fr.px(x):.2f}" cy="{fr.py(y):.2f}" r="3" fill="{c}"/>')
        ly = TOP + 14 + 18 * i
        body.append(f'<line x1="{W - RIGHT + 12}" x2="{W - RIGHT + 30}" y1="{ly - 4}" y2="{ly - 4}" '
                    f'stroke="{c}" stroke-width="2"/>')
        body.append(f'<text x="{W - RIGHT + 36}" y="{ly}" font-size="12">{escape(str(label))}</text>')
    return _wrap(body)


def band_plot(x, lo, hi, points=None, title: str = "", xlabel: str = "x", ylabel: str = "y") -> str:
    """Shaded interval band over sorted ``x`` with an optional scatter ``(px, py)``."""
    order = np.argsort(x)
    x, lo, hi = np.asarray(x)[order], np.asarray(lo)[order], np.asarray(hi)[order]
    ys = list(lo[np.isfinite(lo)]) + list(hi[np.isfinite(hi)])
    if points is not None:
        ys += list(points[1])
    fr = _Frame(list(x), ys)
    body = _axes(fr, title, xlabel, ylabel)
    if points is not None:
        for a, b in zip(*points):
            body.append(f'<circle cx="{fr.px(a):.1f}" cy="{fr.py(b):.1f}" r="1.4" fill="#888" fill-opacity="0.5"/>')
    ok = np.isfinite(lo) & np.isfinite(hi)
    if ok.any():
        top = [f"{fr.px(a):.2f},{fr.py(b):.2f}" for a, b in zip(x[ok], hi[ok])]
        bot = [f"{fr.px(a):.2f},{fr.py(b):.2f}" for a, b in zip(x[ok][::-1], lo[ok][::-1])]
        body.append(f'<polygon points="{" ".join(top + bot)}" fill="{PALETTE[0]}" fill-opacity="0.25" '
                    f'stroke="{PALETTE[0]}"/>')
    return _wrap(body)
