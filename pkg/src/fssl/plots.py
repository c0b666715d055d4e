"""Standalone SVG precision-recall plots (no plotting library needed)."""

from __future__ import annotations

from typing import Dict, Sequence
from xml.sax.saxutils import escape

from .evaluation import PrCurve

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _step_points(curve: PrCurve):
    """Interpolated PR envelope as a staircase, from recall 0 to the last operating point."""
    r = curve.recall.tolist()
    p = curve.precision.tolist()
    env = p[:]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    pts = [(0.0, env[0])]
    for ri, pi in zip(r, env):
        pts.append((ri, pts[-1][1]))
        pts.append((ri, pi))
    return pts


def pr_curve_svg(curves: Dict[str, PrCurve], title: str, width: int = 480, height: int = 360,
                 header_lines: Sequence[str] = ()) -> str:
    """One panel with every curve in ``curves`` overlaid; the legend follows dict order."""
    left, right, top, bottom = 56, 16, 34, 48
    pw, ph = width - left - right, height - top - bottom

    def sx(r):
        return left + r * pw

    def sy(p):
        return top + (1.0 - p) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    for line in header_lines:
        out.append(f"<!-- {escape(line)} -->")
    out.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')
    out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i in range(6):
        v = i / 5
        out.append(f'<line x1="{sx(v):.1f}" y1="{top}" x2="{sx(v):.1f}" y2="{top + ph}" stroke="#eee"/>')
        out.append(f'<line x1="{left}" y1="{sy(v):.1f}" x2="{left + pw}" y2="{sy(v):.1f}" stroke="#eee"/>')
        out.append(f'<text x="{sx(v):.1f}" y="{top + ph + 14}" text-anchor="middle">{v:.1f}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">recall</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">precision</text>')
    for k, (name, curve) in enumerate(curves.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(r):.2f},{sy(p):.2f}" for r, p in _step_points(curve))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = top + 14 + 15 * k
        out.append(f'<line x1="{left + 10}" y1="{ly - 4}" x2="{left + 30}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + 36}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
