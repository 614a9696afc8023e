"""Minimal deterministic SVG line charts (axes, legend, optional band and reference line)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

__all__ = ["Series", "line_chart"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 40, 60


@dataclass(frozen=True)
class Series:
    name: str
    x: tuple[float, ...]
    y: tuple[float, ...]
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(step):
        out.append(round(v, 12))
        v += step
    return out


def line_chart(
    series: list[Series],
    title: str,
    xlabel: str,
    ylabel: str,
    reference: float | None = None,
    logx: bool = False,
) -> str:
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    xs = [tx(v) for s in series for v in s.x if (v > 0 or not logx)]
    ys = [v for s in series for v in s.y if math.isfinite(v)]
    for s in series:
        for band in (s.lower, s.upper):
            if band:
                ys += [v for v in band if math.isfinite(v)]
    if reference is not None:
        ys.append(reference)
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(v):
        return LEFT + (tx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        label = f"{10 ** t:g}" if logx else f"{t:g}"
        out.append(f'<line x1="{_num(LEFT + (t - x0) / (x1 - x0) * pw)}" y1="{TOP + ph}" '
                   f'x2="{_num(LEFT + (t - x0) / (x1 - x0) * pw)}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(LEFT + (t - x0) / (x1 - x0) * pw)}" y="{TOP + ph + 18}" text-anchor="middle" '
                   f'font-size="11" font-family="sans-serif">{label}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{LEFT - 5}" y1="{_num(py(t))}" x2="{LEFT}" y2="{_num(py(t))}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_num(py(t) + 4)}" text-anchor="end" font-size="11" '
                   f'font-family="sans-serif">{t:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.0f}" y="{H - 15}" text-anchor="middle" font-size="12" '
               f'font-family="sans-serif">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.0f}" text-anchor="middle" font-size="12" font-family="sans-serif" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.0f})">{escape(ylabel)}</text>')
    if reference is not None:
        out.append(f'<line x1="{LEFT}" y1="{_num(py(reference))}" x2="{LEFT + pw}" y2="{_num(py(reference))}" '
                   'stroke="gray" stroke-dasharray="6,4"/>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = [(x, y) for x, y in zip(s.x, s.y) if math.isfinite(y) and (x > 0 or not logx)]
        if s.lower and s.upper:
            band = [(x, lo, hi) for x, lo, hi in zip(s.x, s.lower, s.upper)
                    if math.isfinite(lo) and math.isfinite(hi) and (x > 0 or not logx)]
            if band:
                poly = [f"{_num(px(x))},{_num(py(hi))}" for x, _, hi in band]
                poly += [f"{_num(px(x))},{_num(py(lo))}" for x, lo, _ in reversed(band)]
                out.append(f'<polygon points="{" ".join(poly)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        if pts:
            path = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = TOP + 10 + 20 * i
        out.append(f'<line x1="{LEFT + pw + 15}" y1="{ly}" x2="{LEFT + pw + 35}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 40}" y="{ly + 4}" font-size="11" font-family="sans-serif">{escape(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
