"""Small-multiple line charts of log MSE ratios as plain SVG text.

Rows are the dimensions p, columns the bias ratios, the x axis is n_S and
each method gets one polyline.  Output depends only on the input table:
numbers are formatted with fixed precision and iteration order is sorted.
"""

from __future__ import annotations

import math
from html import escape

from .fusion import METHODS

COLORS = {
    "Small": "#000000",
    "Big": "#7f7f7f",
    "Pool": "#d62728",
    "W2": "#1f77b4",
    "Wh": "#17becf",
    "JSP": "#9467bd",
    "L1": "#2ca02c",
    "L2": "#ff7f0e",
}
DASHES = {"Wh": "6,3"}

PANEL_W, PANEL_H = 260, 190
PAD_L, PAD_R, PAD_T, PAD_B = 52, 14, 26, 38
LEGEND_H = 34


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9)
    ticks = []
    k = start
    while k * step <= hi + 1e-9 * step:
        ticks.append(round(k * step, 10))
        k += 1
    return ticks


def _label(v: float) -> str:
    return f"{v:g}"


def emit_figure_grid(table: list[dict], path=None, *, title: str | None = None) -> str:
    """Render the log-ratio table; writes ``path`` when given and returns the SVG text.

    ``table`` rows need ``p``, ``gamma_ratio``, ``n_S``, ``method`` and
    ``log_ratio``.  Rows from several ``n_B`` or mechanisms must be split by
    the caller, one figure each.
    """
    if not table:
        raise ValueError("cannot draw an empty table")
    combos = {(r.get("n_B"), r.get("bias_mechanism")) for r in table}
    if len(combos) > 1:
        raise ValueError("table mixes several n_B / mechanism settings; emit one figure per setting")
    ps = sorted({int(r["p"]) for r in table})
    ratios = sorted({float(r["gamma_ratio"]) for r in table})
    methods = [m for m in METHODS if any(r["method"] == m for r in table)]

    width = 24 + len(ratios) * PANEL_W
    height = LEGEND_H + len(ps) * PANEL_H + (18 if title else 0)
    top0 = LEGEND_H + (18 if title else 0)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="10">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{_f(width / 2)}" y="14" text-anchor="middle" font-size="12">{escape(title)}</text>')

    # shared legend
    x = PAD_L
    ly = top0 - 16
    for m in methods:
        dash = f' stroke-dasharray="{DASHES[m]}"' if m in DASHES else ""
        out.append(f'<line x1="{x}" y1="{ly}" x2="{x + 22}" y2="{ly}" stroke="{COLORS[m]}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{x + 26}" y="{ly + 3}">{escape(m)}</text>')
        x += 70

    for i, p in enumerate(ps):
        for j, ratio in enumerate(ratios):
            cell = [r for r in table if int(r["p"]) == p and float(r["gamma_ratio"]) == ratio]
            out.extend(_panel(cell, methods, 12 + j * PANEL_W, top0 + i * PANEL_H, p, ratio))
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return text


def _panel(cell, methods, x0, y0, p, ratio):
    out = [f'<g class="panel" data-p="{p}" data-ratio="{_label(ratio)}">']
    left, right = x0 + PAD_L, x0 + PANEL_W - PAD_R
    top, bottom = y0 + PAD_T, y0 + PANEL_H - PAD_B
    out.append(f'<text x="{_f((left + right) / 2)}" y="{y0 + 16}" text-anchor="middle">'
               f'p = {p}, ratio = {_label(ratio)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
               f'fill="none" stroke="#888888" stroke-width="0.5"/>')
    if not cell:
        out.append("</g>")
        return out

    xs = sorted({int(r["n_S"]) for r in cell})
    ys = [float(r["log_ratio"]) for r in cell if math.isfinite(float(r["log_ratio"]))] + [0.0]
    ylo, yhi = min(ys), max(ys)
    if yhi - ylo < 1e-9:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    padding = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - padding, yhi + padding
    xlo, xhi = (xs[0], xs[-1]) if len(xs) > 1 else (xs[0] - 1, xs[0] + 1)

    def sx(v):
        return left + (v - xlo) / (xhi - xlo) * (right - left)

    def sy(v):
        return bottom - (v - ylo) / (yhi - ylo) * (bottom - top)

    for t in _nice_ticks(ylo, yhi):
        if ylo <= t <= yhi:
            out.append(f'<line x1="{left - 3}" y1="{_f(sy(t))}" x2="{left}" y2="{_f(sy(t))}" stroke="#444444"/>')
            out.append(f'<text x="{left - 5}" y="{_f(sy(t) + 3)}" text-anchor="end">{_label(t)}</text>')
    for v in xs:
        out.append(f'<line x1="{_f(sx(v))}" y1="{bottom}" x2="{_f(sx(v))}" y2="{bottom + 3}" stroke="#444444"/>')
        out.append(f'<text x="{_f(sx(v))}" y="{bottom + 13}" text-anchor="middle">{v}</text>')
    out.append(f'<text x="{_f((left + right) / 2)}" y="{bottom + 28}" text-anchor="middle">n_S</text>')
    out.append(f'<line x1="{left}" y1="{_f(sy(0.0))}" x2="{right}" y2="{_f(sy(0.0))}" '
               f'stroke="#bbbbbb" stroke-dasharray="2,2"/>')

    for m in methods:
        pts = sorted((int(r["n_S"]), float(r["log_ratio"])) for r in cell if r["method"] == m)
        pts = [(a, b) for a, b in pts if math.isfinite(b)]
        if not pts:
            continue
        dash = f' stroke-dasharray="{DASHES[m]}"' if m in DASHES else ""
        coords = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{COLORS[m]}" stroke-width="1.5"{dash}>'
                   f'<title>{escape(m)}</title></polyline>')
        for a, b in pts:
            out.append(f'<circle cx="{_f(sx(a))}" cy="{_f(sy(b))}" r="1.8" fill="{COLORS[m]}"/>')
    out.append("</g>")
    return out
