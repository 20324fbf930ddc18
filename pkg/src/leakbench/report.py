"""Report files and the grouped bar chart rendered from them."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from html import escape
from pathlib import Path

from leakbench import __version__
from leakbench.dataset import write_atomic
from leakbench.errors import DataError

REPORT_FILE = "eval_report.json"
METRICS = ("plcc", "srocc")
COLORS = {"plcc": "#4a79b5", "srocc": "#d9822b"}


def dumps_report(reports: list[dict]) -> str:
    """Canonical JSON: sorted keys, no timestamps, trailing newline."""
    return json.dumps({"reports": reports}, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(reports: list[dict], out_dir) -> Path:
    path = Path(out_dir) / REPORT_FILE
    write_atomic(path, dumps_report(reports))
    return path


def load_report(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        reports = raw["reports"]
    except FileNotFoundError:
        raise DataError(f"no report at {path}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed report {path}: {exc}") from None
    for r in reports:
        if "summary" not in r or "protocol" not in r:
            raise DataError(f"report entry without summary/protocol in {path}")
    return reports


def chart_rows(reports: list[dict]) -> list[dict]:
    """(cell label, metric, mean, std) rows in report order."""
    labels = [r["protocol"].get("label") or r["protocol"]["tag"] for r in reports]
    if len(set(labels)) != len(labels):
        labels = [r["protocol"]["tag"] for r in reports]
    rows = []
    for r, label in zip(reports, labels):
        for metric in METRICS:
            rows.append(
                {
                    "cell": label,
                    "metric": metric,
                    "mean": r["summary"][f"{metric}_mean"],
                    "std": r["summary"][f"{metric}_std"],
                }
            )
    return rows


def render_svg(reports: list[dict], title: str = "Test correlation per protocol") -> str:
    """Grouped bars (PLCC, SROCC) per protocol cell with +-1 std error bars.

    Each bar carries its mean and std as ``data-*`` attributes written with
    ``repr`` so they parse back to the exact report floats.
    """
    rows = chart_rows(reports)
    cells = list(dict.fromkeys(r["cell"] for r in rows))
    left, right, top, bottom = 60, 20, 50, 150
    group_w = 90
    plot_w = max(group_w * len(cells), 200)
    plot_h = 260
    width, height = left + plot_w + right, top + plot_h + bottom
    lo = min([0.0] + [r["mean"] - r["std"] for r in rows if r["mean"] is not None])
    hi = 1.0

    def y(v):
        return top + plot_h * (hi - v) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f"<!-- leakbench {__version__} -->",
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for k in range(int(lo * 10), 11, 2):
        v = k / 10
        out.append(f'<line x1="{left}" x2="{left + plot_w}" y1="{y(v):.2f}" y2="{y(v):.2f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{left - 6}" y="{y(v) + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<line x1="{left}" x2="{left + plot_w}" y1="{y(0):.2f}" y2="{y(0):.2f}" stroke="#333"/>')

    bar_w = group_w * 0.32
    for ci, cell in enumerate(cells):
        x0 = left + ci * group_w + group_w * 0.15
        for mi, metric in enumerate(METRICS):
            row = next(r for r in rows if r["cell"] == cell and r["metric"] == metric)
            x = x0 + mi * (bar_w + 4)
            attrs = (
                f'data-cell="{escape(cell)}" data-metric="{metric}" '
                f'data-mean="{row["mean"]!r}" data-std="{row["std"]!r}"'
            )
            if row["mean"] is None:
                out.append(f'<g class="bar undefined" {attrs}/>')
                continue
            top_y, base_y = y(max(row["mean"], 0.0)), y(min(row["mean"], 0.0))
            cx = x + bar_w / 2
            out.append(f'<g class="bar" {attrs}>')
            out.append(
                f'<rect x="{x:.2f}" y="{top_y:.2f}" width="{bar_w:.2f}" height="{base_y - top_y:.2f}" '
                f'fill="{COLORS[metric]}"/>'
            )
            e_lo, e_hi = y(row["mean"] - row["std"]), y(row["mean"] + row["std"])
            out.append(f'<line x1="{cx:.2f}" x2="{cx:.2f}" y1="{e_lo:.2f}" y2="{e_hi:.2f}" stroke="#222"/>')
            for ey in (e_lo, e_hi):
                out.append(f'<line x1="{cx - 4:.2f}" x2="{cx + 4:.2f}" y1="{ey:.2f}" y2="{ey:.2f}" stroke="#222"/>')
            out.append("</g>")
        lx = x0 + bar_w
        ly = top + plot_h + 12
        out.append(
            f'<text x="{lx:.2f}" y="{ly}" transform="rotate(40 {lx:.2f} {ly})" font-size="9">{escape(cell)}</text>'
        )
    for mi, metric in enumerate(METRICS):
        lx = left + 10 + mi * 80
        out.append(f'<rect x="{lx}" y="30" width="10" height="10" fill="{COLORS[metric]}"/>')
        out.append(f'<text x="{lx + 14}" y="39">{metric.upper()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_values(svg: str) -> list[dict]:
    """Parse the ``data-*`` bar attributes back out of a rendered chart."""
    root = ET.fromstring(svg)
    out = []
    for g in root.iter("{http://www.w3.org/2000/svg}g"):
        if "data-metric" not in g.attrib:
            continue
        parse = lambda s: None if s == "None" else float(s)
        out.append(
            {
                "cell": g.attrib["data-cell"],
                "metric": g.attrib["data-metric"],
                "mean": parse(g.attrib["data-mean"]),
                "std": parse(g.attrib["data-std"]),
            }
        )
    return out
