"""SVG reports: a precision-recall panel and an echogram overlay panel."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PANEL = 320
PAD = 40


def _pr_panel(report, x0: float) -> list[str]:
    out = [f'<g id="pr-curve" transform="translate({x0},{PAD})">',
           f'<rect x="0" y="0" width="{PANEL}" height="{PANEL}" fill="white" stroke="black"/>']
    for k in range(11):
        v = k / 10
        out.append(f'<line x1="{v * PANEL:.1f}" y1="0" x2="{v * PANEL:.1f}" y2="{PANEL}" stroke="#ddd"/>')
        out.append(f'<line x1="0" y1="{v * PANEL:.1f}" x2="{PANEL}" y2="{v * PANEL:.1f}" stroke="#ddd"/>')
    pts = sorted(((p.recall, p.precision) for p in report.pr_curve))
    if pts:
        path = " ".join(f"{r * PANEL:.2f},{(1 - p) * PANEL:.2f}" for r, p in pts)
        out.append(f'<polyline id="pr-line" points="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    ods = next((p for p in report.pr_curve if p.threshold == report.ods["threshold"]), None)
    if ods is not None:
        out.append(f'<circle id="ods-point" cx="{ods.recall * PANEL:.2f}" cy="{(1 - ods.precision) * PANEL:.2f}" '
                   f'r="5" fill="#d62728"/>')
    label = f'ODS {report.ods["f"]:.3f}  OIS {report.ois:.3f}  AP {report.ap:.3f}'
    if report.mae_overall is not None:
        label += f"  MAE {report.mae_overall:.2f}px"
    out.append(f'<text x="0" y="-10" font-size="12" font-family="sans-serif">{escape(label)}</text>')
    out.append(f'<text x="{PANEL / 2}" y="{PANEL + 28}" font-size="12" text-anchor="middle" font-family="sans-serif">recall</text>')
    out.append(f'<text x="-28" y="{PANEL / 2}" font-size="12" font-family="sans-serif" '
               f'transform="rotate(-90 -28 {PANEL / 2})" text-anchor="middle">precision</text>')
    out.append("</g>")
    return out


def _echogram_panel(image, layer_sets, x0: float, max_cells: int = 128) -> list[str]:
    img = np.asarray(image, dtype=np.float64)
    while img.ndim > 2:
        img = img[0]
    rows, cols = img.shape
    step = max(1, int(np.ceil(max(rows, cols) / max_cells)))
    small = img[::step, ::step]
    lo, hi = float(small.min()), float(small.max())
    norm = (small - lo) / (hi - lo) if hi > lo else np.zeros_like(small)
    sx, sy = PANEL / cols, PANEL / rows
    out = [f'<g id="echogram" transform="translate({x0},{PAD})">']
    for i in range(small.shape[0]):
        for j in range(small.shape[1]):
            g = int(round(255 * norm[i, j]))
            out.append(f'<rect x="{j * step * sx:.2f}" y="{i * step * sy:.2f}" width="{step * sx + 0.05:.2f}" '
                       f'height="{step * sy + 0.05:.2f}" fill="rgb({g},{g},{g})"/>')
    for name, (layers, color) in layer_sets.items():
        for k, layer in enumerate(layers.layers if layers is not None else []):
            cs = sorted(layer)
            # break polylines at gaps
            runs, run = [], [cs[0]]
            for c in cs[1:]:
                if c == run[-1] + 1:
                    run.append(c)
                else:
                    runs.append(run)
                    run = [c]
            runs.append(run)
            for run in runs:
                pts = " ".join(f"{(c + 0.5) * sx:.2f},{(layer[c] + 0.5) * sy:.2f}" for c in run)
                out.append(f'<polyline class="{name}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    out.append(f'<text x="0" y="-10" font-size="12" font-family="sans-serif">'
               f'echogram (ground truth black, prediction green)</text>')
    out.append("</g>")
    return out


def render_svg(report, image, gt_layers=None, pred_layers=None) -> str:
    width = 2 * PANEL + 3 * PAD + 20
    height = PANEL + 2 * PAD + 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    parts += _pr_panel(report, PAD)
    parts += _echogram_panel(image, {"gt": (gt_layers, "black"), "pred": (pred_layers, "#2ca02c")}, 2 * PAD + PANEL + 20)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
