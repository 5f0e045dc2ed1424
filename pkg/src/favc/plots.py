"""Self-contained SVG figures: waveform overlays, log-PSD heatmaps, scalp maps, bars and lines.

Everything is emitted as plain SVG text with fixed-precision coordinates, so
identical inputs give byte-identical files.
"""

from __future__ import annotations

from html import escape

import numpy as np
from scipy.interpolate import RBFInterpolator

# viridis sampled at five points; intermediate colours are linear blends
_ANCHORS = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
                    dtype=np.float64)
PALETTE = ("#222222", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(v: float) -> str:
    return f"{float(v):.2f}"


def colour(t: float) -> str:
    """Map t in [0, 1] onto the sequential colour ramp."""
    t = float(np.clip(t, 0.0, 1.0)) * (len(_ANCHORS) - 1)
    i = min(int(t), len(_ANCHORS) - 2)
    rgb = _ANCHORS[i] + (t - i) * (_ANCHORS[i + 1] - _ANCHORS[i])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def document(width: float, height: float, body: list[str], meta: str = "") -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif" font-size="10">')
    lines = [head]
    if meta:
        lines.append(f"<!-- {escape(meta)} -->")
    lines.append(f'<rect width="{_f(width)}" height="{_f(height)}" fill="white"/>')
    lines.extend(body)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _text(x, y, s, anchor="start", size=None, extra="") -> str:
    sz = f' font-size="{size}"' if size else ""
    return f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{sz}{extra}>{escape(str(s))}</text>'


def polyline_path(xs, ys) -> str:
    pts = [f"{_f(x)} {_f(y)}" for x, y in zip(xs, ys)]
    return "M" + " L".join(pts)


def waveform_overlay(truth, pred, names, fs: float, meta: str = "", width=900, row_h=42) -> str:
    """Stacked per-channel traces of the recorded (black) and generated (red) signal."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError("overlay needs matching arrays")
    C, T = truth.shape
    left, top = 50, 20
    plot_w = width - left - 10
    xs = left + np.arange(T) * plot_w / max(T - 1, 1)
    body = [_text(left, 12, f"recorded (black) vs generated (red), {T / fs:g} s")]
    for c in range(C):
        mid = top + (c + 0.5) * row_h
        amp = max(np.abs(truth[c]).max(), np.abs(pred[c]).max(), 1e-12)
        k = 0.45 * row_h / amp
        body.append(_text(left - 6, mid + 3, names[c], anchor="end"))
        body.append(f'<path class="true" data-channel="{escape(names[c])}" fill="none" stroke="{PALETTE[0]}" '
                    f'stroke-width="0.8" d="{polyline_path(xs, mid - k * truth[c])}"/>')
        body.append(f'<path class="pred" data-channel="{escape(names[c])}" fill="none" stroke="{PALETTE[1]}" '
                    f'stroke-width="0.8" d="{polyline_path(xs, mid - k * pred[c])}"/>')
    return document(width, top + C * row_h + 10, body, meta)


def shared_range(arrays) -> tuple[float, float]:
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def _colourbar(x, y, h, lo, hi, label) -> list[str]:
    out = []
    n = 32
    for i in range(n):
        out.append(f'<rect x="{_f(x)}" y="{_f(y + h - (i + 1) * h / n)}" width="10" height="{_f(h / n + 0.3)}" '
                   f'fill="{colour(i / (n - 1))}"/>')
    out.append(_text(x + 14, y + 8, f"{hi:.3g}"))
    out.append(_text(x + 14, y + h, f"{lo:.3g}"))
    out.append(_text(x, y - 4, label))
    return out


def heatmap_panels(panels: dict, freqs, names, meta: str = "", cell_w=4.0, cell_h=12.0) -> str:
    """One channel x frequency panel per entry, all on a single colour scale."""
    grids = {k: np.asarray(v, dtype=np.float64) for k, v in panels.items()}
    lo, hi = shared_range(grids.values())
    freqs = np.asarray(freqs)
    rows, cols = next(iter(grids.values())).shape
    left, top, gap = 40, 30, 30
    pw = cols * cell_w
    body = []
    for p, (label, g) in enumerate(grids.items()):
        if g.shape != (rows, cols):
            raise ValueError("all heatmap panels must share a shape")
        x0 = left + p * (pw + gap)
        body.append(f'<g class="panel" data-name="{escape(label)}" data-rows="{rows}" data-cols="{cols}" '
                    f'data-vmin="{lo:.10g}" data-vmax="{hi:.10g}">')
        body.append(_text(x0, top - 8, label))
        for r in range(rows):
            for c in range(cols):
                t = (g[r, c] - lo) / (hi - lo)
                body.append(f'<rect class="cell" x="{_f(x0 + c * cell_w)}" y="{_f(top + r * cell_h)}" '
                            f'width="{_f(cell_w)}" height="{_f(cell_h)}" fill="{colour(t)}"/>')
        body.append(_text(x0, top + rows * cell_h + 12, f"{freqs[0]:g}"))
        body.append(_text(x0 + pw, top + rows * cell_h + 12, f"{freqs[-1]:g} Hz", anchor="end"))
        body.append("</g>")
    for r, n in enumerate(names):
        body.append(_text(left - 4, top + (r + 0.75) * cell_h, n, anchor="end", size=8))
    xb = left + len(grids) * (pw + gap)
    body.extend(_colourbar(xb, top, rows * cell_h, lo, hi, "log10 PSD"))
    return document(xb + 60, top + rows * cell_h + 24, body, meta)


def topomaps(values: dict, xy, names, meta: str = "", size=160, grid=40) -> str:
    """Scalp maps of one value per electrode, shaded by a thin-plate RBF fit.

    All maps share one colour scale taken over every interpolated field.
    """
    xy = np.asarray(xy, dtype=np.float64)
    radius = 1.1 * np.max(np.linalg.norm(xy, axis=1))
    g = np.linspace(-radius, radius, grid)
    gx, gy = np.meshgrid(g, g)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = np.hypot(pts[:, 0], pts[:, 1]) <= radius
    fields = {}
    for k, v in values.items():
        f = RBFInterpolator(xy, np.asarray(v, dtype=np.float64), kernel="thin_plate_spline")(pts[inside])
        fields[k] = f
    lo, hi = shared_range(list(fields.values()) + [np.asarray(v) for v in values.values()])
    pad = 20
    px = size / grid
    body = []
    for m, (label, f) in enumerate(fields.items()):
        x0 = pad + m * (size + pad)
        y0 = 30
        body.append(f'<g class="topomap" data-name="{escape(label)}" data-vmin="{lo:.10g}" data-vmax="{hi:.10g}">')
        body.append(_text(x0 + size / 2, y0 - 8, label, anchor="middle"))
        for (p, q), val in zip(pts[inside], f):
            cx = x0 + (p + radius) / (2 * radius) * size
            cy = y0 + (radius - q) / (2 * radius) * size  # nose (+y) at the top
            body.append(f'<rect x="{_f(cx - px / 2)}" y="{_f(cy - px / 2)}" width="{_f(px + 0.2)}" '
                        f'height="{_f(px + 0.2)}" fill="{colour((val - lo) / (hi - lo))}"/>')
        body.append(f'<circle cx="{_f(x0 + size / 2)}" cy="{_f(y0 + size / 2)}" r="{_f(size / 2)}" '
                    f'fill="none" stroke="black"/>')
        for (p, q), n in zip(xy, names):
            cx = x0 + (p + radius) / (2 * radius) * size
            cy = y0 + (radius - q) / (2 * radius) * size
            body.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="2" fill="white" stroke="black"/>')
            body.append(_text(cx, cy - 4, n, anchor="middle", size=7))
        body.append("</g>")
    xb = pad + len(fields) * (size + pad)
    body.extend(_colourbar(xb, 30, size, lo, hi, "log10 power"))
    return document(xb + 60, size + 50, body, meta)


def bar_chart(groups, series: dict, errors: dict | None = None, title: str = "", meta: str = "",
              width=640, height=260) -> str:
    """Grouped bars, one group per entry of ``groups``, one bar per series; each
    group is scaled to its own maximum so metrics with different units share a panel."""
    left, top, bottom = 40, 30, 40
    plot_h = height - top - bottom
    gw = (width - left - 120) / len(groups)
    bw = 0.8 * gw / len(series)
    body = [_text(left, 16, title)]
    for gi, g in enumerate(groups):
        vals = [series[s][gi] for s in series]
        errs = [errors[s][gi] if errors else 0.0 for s in series]
        vmax = max(max(abs(v) + e for v, e in zip(vals, errs)), 1e-12)
        for si, (s, v, e) in enumerate(zip(series, vals, errs)):
            h = abs(v) / vmax * plot_h
            x = left + gi * gw + 0.1 * gw + si * bw
            y = top + plot_h - h
            body.append(f'<rect class="bar" data-series="{escape(s)}" data-group="{escape(g)}" '
                        f'data-value="{v:.10g}" x="{_f(x)}" y="{_f(y)}" width="{_f(bw)}" height="{_f(h)}" '
                        f'fill="{PALETTE[si % len(PALETTE)]}"/>')
            if e:
                ye = e / vmax * plot_h
                body.append(f'<line x1="{_f(x + bw / 2)}" x2="{_f(x + bw / 2)}" y1="{_f(y - ye)}" '
                            f'y2="{_f(min(y + ye, top + plot_h))}" stroke="black"/>')
        body.append(_text(left + (gi + 0.5) * gw, top + plot_h + 14, g, anchor="middle"))
    body.append(f'<line x1="{left}" x2="{_f(left + len(groups) * gw)}" y1="{_f(top + plot_h)}" '
                f'y2="{_f(top + plot_h)}" stroke="black"/>')
    for si, s in enumerate(series):
        y = top + 12 * si
        body.append(f'<rect x="{_f(width - 110)}" y="{_f(y)}" width="8" height="8" '
                    f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        body.append(_text(width - 98, y + 8, s))
    return document(width, height, body, meta)


def line_chart(x, series: dict, title: str = "", xlabel: str = "", meta: str = "",
               width=420, panel_h=150) -> str:
    """One small panel per series against a shared x axis."""
    x = np.asarray(x, dtype=np.float64)
    left, top = 60, 24
    plot_w = width - left - 20
    xlo, xhi = (x.min(), x.max()) if x.max() > x.min() else (x.min() - 0.5, x.min() + 0.5)
    body = [_text(left, 14, title)]
    for i, (name, ys) in enumerate(series.items()):
        ys = np.asarray(ys, dtype=np.float64)
        y0 = top + i * (panel_h + 20)
        lo, hi = shared_range([ys])
        px = left + (x - xlo) / (xhi - xlo) * plot_w
        py = y0 + panel_h - (ys - lo) / (hi - lo) * (panel_h - 10) - 5
        body.append(f'<rect x="{left}" y="{_f(y0)}" width="{_f(plot_w)}" height="{_f(panel_h)}" '
                    f'fill="none" stroke="#999999"/>')
        body.append(f'<path class="series" data-name="{escape(name)}" fill="none" '
                    f'stroke="{PALETTE[i % len(PALETTE)]}" d="{polyline_path(px, py)}"/>')
        for a, b, v in zip(px, py, ys):
            body.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="2.5" fill="{PALETTE[i % len(PALETTE)]}"/>')
        body.append(_text(left - 6, y0 + 10, f"{hi:.4g}", anchor="end"))
        body.append(_text(left - 6, y0 + panel_h, f"{lo:.4g}", anchor="end"))
        body.append(_text(left + 4, y0 + 12, name))
    bottom = top + len(series) * (panel_h + 20)
    for xv, a in zip(x, left + (x - xlo) / (xhi - xlo) * plot_w):
        body.append(_text(a, bottom - 6, f"{xv:g}", anchor="middle"))
    body.append(_text(left + plot_w / 2, bottom + 8, xlabel, anchor="middle"))
    return document(width, bottom + 14, body, meta)
