"""Report writers: JSON, CSV, and a dependency-free SVG bar chart."""

from __future__ import annotations

import csv
import io
import json
import os
from typing import Sequence
from xml.sax.saxutils import escape

from .measures import SensitivityReport
from .spectral import _atomic_write

__all__ = ["render_json", "render_csv", "render_svg", "write_outputs"]

_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3")


def render_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def render_csv(names: Sequence[str], reports: Sequence[SensitivityReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["input"] + [r.label for r in reports])
    for i, name in enumerate(names):
        writer.writerow([name] + [repr(float(r.normalized[i])) for r in reports])
    return buf.getvalue()


def render_svg(names: Sequence[str], reports: Sequence[SensitivityReport], title: str = "") -> str:
    """Grouped bars of normalised scores, one group per input (800x400 viewBox)."""
    width, height = 800, 400
    left, right, top, bottom = 50, 20, 40, 50
    plot_w = width - left - right
    plot_h = height - top - bottom
    d = len(names)
    k = max(len(reports), 1)
    peak = max([float(v) for r in reports for v in r.normalized] + [1e-12])
    ymax = min(1.0, peak * 1.15) if peak > 0 else 1.0
    group_w = plot_w / max(d, 1)
    bar_w = group_w * 0.8 / k

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    y0 = top + plot_h
    out.append(f'<line x1="{left}" y1="{y0}" x2="{width - right}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{y0}" stroke="black"/>')
    for t in range(5):
        val = ymax * t / 4
        y = y0 - plot_h * t / 4
        out.append(f'<text x="{left - 4}" y="{y + 3:.1f}" text-anchor="end">{val:.2f}</text>')

    for j, rep in enumerate(reports):
        color = _PALETTE[j % len(_PALETTE)]
        for i in range(d):
            v = float(rep.normalized[i])
            h = plot_h * v / ymax if ymax > 0 else 0.0
            x = left + i * group_w + group_w * 0.1 + j * bar_w
            out.append(
                f'<rect class="bar" data-method="{escape(rep.label)}" data-input="{escape(names[i])}" '
                f'x="{x:.2f}" y="{y0 - h:.2f}" width="{bar_w:.2f}" height="{h:.2f}" fill="{color}"/>'
            )
            out.append(
                f'<text x="{x + bar_w / 2:.2f}" y="{y0 - h - 2:.2f}" text-anchor="middle" '
                f'font-size="8">{v:.3f}</text>'
            )
    for i, name in enumerate(names):
        cx = left + (i + 0.5) * group_w
        out.append(f'<text x="{cx:.2f}" y="{y0 + 14}" text-anchor="middle">{escape(name)}</text>')

    lx = width - right - 150
    for j, rep in enumerate(reports):
        ly = top + j * 14
        out.append(f'<rect x="{lx}" y="{ly}" width="10" height="10" fill="{_PALETTE[j % len(_PALETTE)]}"/>')
        out.append(f'<text x="{lx + 14}" y="{ly + 9}">{escape(rep.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_outputs(out_dir, formats, names, reports, payload: dict, title: str = "") -> dict:
    """Write the requested formats atomically; returns ``{format: path}``."""
    paths = {}
    if "json" in formats:
        paths["json"] = os.path.join(out_dir, "report.json")
        _atomic_write(paths["json"], render_json(payload))
    if "csv" in formats:
        paths["csv"] = os.path.join(out_dir, "report.csv")
        _atomic_write(paths["csv"], render_csv(names, reports))
    if "svg" in formats:
        paths["svg"] = os.path.join(out_dir, "chart.svg")
        _atomic_write(paths["svg"], render_svg(names, reports, title))
    return paths
