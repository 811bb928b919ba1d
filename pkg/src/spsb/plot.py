"""Hand-written SVG loss curves (x: circuit evaluations, y: loss)."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataError
from .tasks.history import RunHistory, read_csv
from .tasks.stats import DEFAULT_WINDOWS, aggregate_runs

WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=70, right=190, top=30, bottom=50)
# one hue family per method, shade per learning rate
PALETTE = {
    "spsb": ["#b2182b", "#d6604d", "#f4a582", "#67001f", "#e7298a", "#ce1256"],
    "param-shift": ["#2166ac", "#4393c3", "#92c5de", "#053061", "#1b9e77", "#7570b3"],
    "finite-diff": ["#1a9850", "#66bd63", "#a6d96a", "#006837", "#d9ef8b", "#00441b"],
}


def _group(histories: list[RunHistory]) -> dict[tuple[str, float], list[RunHistory]]:
    groups: dict[tuple[str, float], list[RunHistory]] = {}
    for h in histories:
        groups.setdefault((h.method, h.lr), []).append(h)
    return groups


def _panel(series, x0, y0, w, h, ylabel) -> list[str]:
    xs = np.concatenate([s["x"] for s in series])
    ys = np.concatenate([s["y"] for s in series] + [s["raw"] for s in series if s.get("raw") is not None])
    ys = ys[np.isfinite(ys)]
    xmin, xmax = 0.0, float(xs.max()) or 1.0
    ymin, ymax = float(ys.min()), float(ys.max())
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 0.5, ymax + 0.5

    def sx(v):
        return x0 + (v - xmin) / (xmax - xmin) * w

    def sy(v):
        return y0 + h - (v - ymin) / (ymax - ymin) * h

    out = [
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
        f'<text x="{x0 - 50}" y="{y0 + h / 2}" transform="rotate(-90 {x0 - 50} {y0 + h / 2})" '
        f'text-anchor="middle" font-size="12">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xmin + frac * (xmax - xmin)
        yv = ymin + frac * (ymax - ymin)
        out.append(f'<text x="{sx(xv):.1f}" y="{y0 + h + 15}" text-anchor="middle" font-size="10">{xv:.4g}</text>')
        out.append(f'<text x="{x0 - 5}" y="{sy(yv) + 3:.1f}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    for s in series:
        if s.get("raw") is not None:
            pts = " ".join(f"{sx(a):.3f},{sy(b):.6f}" for a, b in zip(s["x"], s["raw"]))
            out.append(
                f'<polyline class="raw" data-label="{escape(s["label"])}" points="{pts}" fill="none" '
                f'stroke="{s["color"]}" stroke-opacity="0.25" stroke-width="1"/>'
            )
        pts = " ".join(f"{sx(a):.3f},{sy(b):.6f}" for a, b in zip(s["x"], s["y"]))
        out.append(
            f'<polyline class="series" data-label="{escape(s["label"])}" points="{pts}" fill="none" '
            f'stroke="{s["color"]}" stroke-width="1.5"/>'
        )
    return out


def emit_plot(
    csv_paths,
    out_path,
    windows: dict[str, int] | None = None,
    show_raw: bool = False,
    accuracy: bool = False,
) -> Path:
    """Write one SVG with a median (optionally smoothed) loss curve per
    (method, learning rate) found in the CSVs."""
    windows = {**DEFAULT_WINDOWS, **(windows or {})}
    histories: list[RunHistory] = []
    for p in csv_paths:
        histories.extend(read_csv(p))
    if not histories:
        raise DataError("no histories to plot")
    groups = _group(histories)
    loss_series, acc_series = [], []
    counts: dict[str, int] = {}
    for (method, lr), runs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        summary = aggregate_runs(runs, windows.get(method, 1))
        shades = PALETTE.get(method, ["#333333"])
        color = shades[counts.get(method, 0) % len(shades)]
        counts[method] = counts.get(method, 0) + 1
        label = f"{method} lr={lr:g}"
        raw = summary.median_loss if show_raw and summary.window > 1 else None
        loss_series.append(dict(x=summary.circuit_evals, y=summary.smoothed_loss, raw=raw, color=color, label=label))
        acc_series.append(dict(x=summary.circuit_evals, y=summary.smoothed_accuracy, raw=None, color=color, label=label))

    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - left - MARGIN["right"]
    ph = HEIGHT - top - MARGIN["bottom"]
    height = HEIGHT + (ph + 40 if accuracy else 0)
    body = _panel(loss_series, left, top, pw, ph, "loss")
    if accuracy:
        body += _panel(acc_series, left, top + ph + 40, pw, ph, "accuracy")
    body.append(
        f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle" font-size="12">circuit evaluations</text>'
    )
    legend = ['<g class="legend">']
    for i, s in enumerate(loss_series):
        y = top + 10 + 18 * i
        lx = left + pw + 15
        legend.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 20}" y2="{y}" stroke="{s["color"]}" stroke-width="2"/>')
        legend.append(f'<text x="{lx + 26}" y="{y + 4}" font-size="11">{escape(s["label"])}</text>')
    legend.append("</g>")
    svg = "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
            f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">',
            f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
            *body,
            *legend,
            "</svg>",
        ]
    )
    out_path = Path(out_path)
    out_path.write_text(svg + "\n")
    return out_path


def polyline_points(svg_text: str, css_class: str = "series") -> dict[str, np.ndarray]:
    """Parse the polylines of an emitted SVG back into (N, 2) pixel arrays."""
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_text)
    out = {}
    for el in root.iter("{http://www.w3.org/2000/svg}polyline"):
        if el.get("class") != css_class:
            continue
        pts = [tuple(map(float, p.split(","))) for p in el.get("points", "").split()]
        out[el.get("data-label")] = np.array(pts)
    return out
