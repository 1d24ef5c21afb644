"""Self-contained SVG plots: log-log rate sweeps and metric/bound overlays."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptySeries
from .io import FORMAT_VERSION

WIDTH, HEIGHT = 640, 440
MARGIN = (70, 30, 30, 55)  # left, right, top, bottom
COLORS = ("#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad", "#d35400")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, int(math.ceil((b - a) / 8)))
        return [float(k) for k in range(a, b + 1, step) if lo - 1e-9 <= k <= hi + 1e-9]
    span = hi - lo
    raw = span / 6 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


def _label(v, log):
    return f"1e{int(round(v))}" if log else f"{v:.3g}"


def emit_plot(series, style="loglog", title="", xlabel="", ylabel="", fit=None):
    """Render series as an SVG string.

    Parameters
    ----------
    series : list of dict
        Each has ``x``, ``y``, optional ``label`` and ``mode`` ("markers" or "line").
    style : {"loglog", "semilogy", "linear"}
    fit : (slope, intercept), optional
        Guide line y = exp(intercept) x^slope for log-log plots, annotated
        with ``slope=...``.

    Raises
    ------
    EmptySeries
        If no series holds a finite point.
    """
    logx = style == "loglog"
    logy = style in ("loglog", "semilogy")
    pts = []
    for s in series:
        x = np.asarray(s["x"], float)
        y = np.asarray(s["y"], float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        pts.append((np.log10(x[ok]) if logx else x[ok], np.log10(y[ok]) if logy else y[ok]))
    allx = np.concatenate([p[0] for p in pts]) if pts else np.empty(0)
    ally = np.concatenate([p[1] for p in pts]) if pts else np.empty(0)
    if allx.size == 0:
        raise EmptySeries("no finite points to plot")
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.05 * (x1 - x0), 0.08 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady
    L, R, T, B = MARGIN
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def sx(v):
        return L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return T + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f"<!-- format_version = {FORMAT_VERSION} -->",
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1, logx):
        X = sx(v)
        out.append(f'<line x1="{X:.2f}" y1="{T + ph}" x2="{X:.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{T + ph + 18}" text-anchor="middle">{_label(v, logx)}</text>')
    for v in _ticks(y0, y1, logy):
        Y = sy(v)
        out.append(f'<line x1="{L - 5}" y1="{Y:.2f}" x2="{L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{Y + 4:.2f}" text-anchor="end">{_label(v, logy)}</text>')
    if title:
        out.append(f'<text x="{L + pw / 2}" y="{T - 10}" text-anchor="middle">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{L + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{T + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {T + ph / 2})">{escape(ylabel)}</text>')
    for i, (s, (px, py)) in enumerate(zip(series, pts)):
        col = COLORS[i % len(COLORS)]
        if s.get("mode", "markers") == "line" and px.size > 1:
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(px, py))
            out.append(f'<polyline points="{d}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        else:
            for a, b in zip(px, py):
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3.5" fill="{col}"/>')
        if s.get("label"):
            ly = T + 16 + 16 * i
            out.append(f'<rect x="{L + 10}" y="{ly - 9}" width="10" height="10" fill="{col}"/>')
            out.append(f'<text x="{L + 26}" y="{ly}">{escape(str(s["label"]))}</text>')
    if fit is not None and logx and logy:
        slope, icpt = fit
        a, b = float(allx.min()), float(allx.max())
        ya, yb = icpt / math.log(10) + slope * a, icpt / math.log(10) + slope * b
        out.append(f'<line x1="{sx(a):.2f}" y1="{sy(ya):.2f}" x2="{sx(b):.2f}" y2="{sy(yb):.2f}" '
                   f'stroke="gray" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{L + pw - 10}" y="{T + ph - 10}" text-anchor="end">'
                   f"slope={slope:.2f}</text>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def rate_plot(fit, label="metric", title=""):
    """Log-log sweep of a RateFit with its guide line."""
    return emit_plot([{"x": fit.hbars, "y": fit.values, "label": label}], "loglog", title,
                     "hbar", label, fit=(fit.slope, fit.intercept))


def envelope_plot(env, title=""):
    """Metric and bound against time; log y-axis when both are positive."""
    m = np.asarray(env.metric, float)
    b = np.asarray(env.bound, float)
    style = "semilogy" if np.all(m > 0) else "linear"
    return emit_plot([{"x": env.times, "y": m, "label": "metric", "mode": "line"},
                      {"x": env.times, "y": b, "label": "bound", "mode": "line"}],
                     style, title or env.name, "t", env.name)
