"""CSV tables and dependency-free SVG line plots for FROC/ROC curves."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .evaluation import FrocPoint

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _num(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_froc_csv(points: list[FrocPoint], path) -> None:
    lines = ["threshold,sensitivity,fp_per_volume"]
    lines += [f"{_num(p.threshold)},{_num(p.sensitivity)},{_num(p.fp_per_volume)}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_froc_csv(path) -> list[FrocPoint]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return [FrocPoint(*map(float, r.split(","))) for r in rows if r]


def write_roc_csv(fpr, tpr, path) -> None:
    lines = ["fpr,tpr"] + [f"{_num(a)},{_num(b)}" for a, b in zip(fpr, tpr)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_auc_csv(rows: list[tuple[str, int | None, float]], path) -> None:
    lines = ["stage,n_views,auc"]
    lines += [f"{stage},{'' if n is None else n},{_num(auc)}" for stage, n, auc in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def froc_series(points: list[FrocPoint]) -> list[tuple[float, float]]:
    """(fp_per_volume, sensitivity) pairs starting from the origin."""
    return [(0.0, 0.0)] + [(p.fp_per_volume, p.sensitivity) for p in points]


def svg_line_plot(
    series: list[tuple[str, list[tuple[float, float]]]],
    path,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    x_max: float | None = None,
    y_max: float = 1.0,
    width: int = 560,
    height: int = 420,
) -> None:
    """Step-free polyline plot; one legend entry per named series."""
    left, right, top, bottom = 60, 20, 36, 50
    pw, ph = width - left - right, height - top - bottom
    if x_max is None:
        xs = [x for _, pts in series for x, _ in pts if math.isfinite(x)]
        x_max = max(xs, default=1.0) or 1.0
    sx = lambda x: left + pw * min(x, x_max) / x_max  # noqa: E731
    sy = lambda y: top + ph * (1.0 - min(y, y_max) / y_max)  # noqa: E731

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for k in range(6):
        fx, fy = x_max * k / 5, y_max * k / 5
        out.append(
            f'<line x1="{sx(fx):.2f}" y1="{top}" x2="{sx(fx):.2f}" y2="{top + ph}" stroke="#eee"/>'
            f'<text x="{sx(fx):.2f}" y="{top + ph + 16}" text-anchor="middle">{fx:.3g}</text>'
        )
        out.append(
            f'<line x1="{left}" y1="{sy(fy):.2f}" x2="{left + pw}" y2="{sy(fy):.2f}" stroke="#eee"/>'
            f'<text x="{left - 6}" y="{sy(fy) + 4:.2f}" text-anchor="end">{fy:.3g}</text>'
        )
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts if math.isfinite(x))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = top + 16 + 16 * i
        out.append(
            f'<line x1="{left + pw - 150}" y1="{ly}" x2="{left + pw - 130}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
            f'<text x="{left + pw - 124}" y="{ly + 4}">{escape(name)}</text>'
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
