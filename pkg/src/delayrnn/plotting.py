"""Static SVG line charts of nRMSE against the number of delays.

One file per (system, train_size, h, horizon) panel.  Network curves come
straight from summary rows; every marker carries ``data-*`` attributes with
the exact CSV strings it was drawn from.  Baselines (dashed) and the
recursion error (green, horizon-1 panels only) are optional overlays.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import quoteattr

__all__ = ["panel_svg", "write_panels"]

W, H = 360, 260
LEFT, RIGHT, TOP, BOTTOM = 48, 12, 28, 36
COLORS = {"fnn": "#d62728", "rnn": "#1f77b4"}
ORACLE_COLOR = "#2ca02c"


def _scale(lo, hi, a, b):
    span = (hi - lo) or 1.0
    return lambda v: a + (float(v) - lo) * (b - a) / span


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def panel_svg(rows: list[dict], title: str, baselines: dict | None = None, oracle: list[dict] | None = None) -> str:
    """SVG document for one panel.

    ``rows`` are summary rows sharing everything but arch and d.  ``baselines``
    maps a label to a value, kept verbatim in the markup.  ``oracle`` rows
    need ``d`` and ``eps_rms``.
    """
    ds = sorted({int(r["d"]) for r in rows} | {int(o["d"]) for o in oracle or []})
    ys = [float(r["mean_nrmse"]) + float(r["stderr"] or 0) for r in rows]
    ys += [float(o["eps_rms"]) for o in oracle or []] + [float(v) for v in (baselines or {}).values()]
    ymax = max(ys + [1e-12]) * 1.05
    sx = _scale(ds[0] - 0.5, ds[-1] + 0.5, LEFT, W - RIGHT)
    sy = _scale(0.0, ymax, H - BOTTOM, TOP)

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="10">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="16" text-anchor="middle" font-size="12">{_esc(title)}</text>',
           f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
           f'<text x="{(LEFT + W - RIGHT) / 2:.1f}" y="{H - 6}" text-anchor="middle">delays d</text>']
    for d in ds:
        x = _fmt(sx(d))
        out.append(f'<text x="{x}" y="{H - BOTTOM + 14}" text-anchor="middle">{d}</text>')
    for i in range(5):
        v = ymax * i / 4
        out.append(f'<text x="{LEFT - 4}" y="{_fmt(sy(v) + 3)}" text-anchor="end">{v:.2g}</text>')

    for label, value in sorted((baselines or {}).items()):
        y = _fmt(sy(value))
        out.append(f'<line class="baseline" data-label={quoteattr(label)} data-value="{value}" '
                   f'x1="{LEFT}" y1="{y}" x2="{W - RIGHT}" y2="{y}" stroke="gray" stroke-dasharray="4 3"/>')

    if oracle:
        pts = sorted(oracle, key=lambda o: int(o["d"]))
        path = " ".join(f"{_fmt(sx(o['d']))},{_fmt(sy(o['eps_rms']))}" for o in pts)
        out.append(f'<polyline class="oracle" points="{path}" fill="none" stroke="{ORACLE_COLOR}"/>')

    by_arch = defaultdict(list)
    for r in rows:
        by_arch[r["arch"]].append(r)
    for k, (arch, group) in enumerate(sorted(by_arch.items())):
        color = COLORS.get(arch, "black")
        group = sorted(group, key=lambda r: int(r["d"]))
        path = " ".join(f"{_fmt(sx(r['d']))},{_fmt(sy(r['mean_nrmse']))}" for r in group)
        out.append(f'<polyline class="net" data-arch="{arch}" points="{path}" fill="none" stroke="{color}"/>')
        for r in group:
            x, m, e = sx(r["d"]), float(r["mean_nrmse"]), float(r["stderr"] or 0)
            out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(sy(m - e))}" x2="{_fmt(x)}" y2="{_fmt(sy(m + e))}" '
                       f'stroke="{color}"/>')
            out.append(f'<circle class="point" data-arch="{arch}" data-d="{r["d"]}" '
                       f'data-mean="{r["mean_nrmse"]}" data-stderr="{r["stderr"]}" '
                       f'cx="{_fmt(x)}" cy="{_fmt(sy(m))}" r="2.5" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT - 4}" y="{TOP + 12 * (k + 1)}" text-anchor="end" fill="{color}">'
                   f'{arch.upper()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_panels(summary: list[dict], out_dir, baselines: list[dict] | None = None,
                 oracle: list[dict] | None = None) -> list[Path]:
    """Write one SVG per panel; returns the paths in a stable order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    panels = defaultdict(list)
    for r in summary:
        panels[(r["system"], int(r["train_size"]), str(r["h"]), int(r["horizon"]))].append(r)
    base = {(b["system"], int(b["train_size"])): b for b in baselines or []}
    paths = []
    for (system, n, h, k), rows in sorted(panels.items()):
        overlays = {}
        if (system, n) in base:
            b = base[(system, n)]
            overlays = {"mean": b["mean_nrmse"], "previous": b["prev_nrmse"]}
        orc = [o for o in oracle or [] if o["system"] == system] if k == 1 else None
        title = f"{system}  N={n}  h={h}  horizon={k}"
        path = out_dir / f"{system}_n{n}_h{h}_k{k}.svg"
        path.write_text(panel_svg(rows, title, overlays, orc or None))
        paths.append(path)
    return paths
