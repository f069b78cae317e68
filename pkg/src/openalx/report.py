"""Curve export (CSV), line plots with quantile bands (SVG) and sampler tables."""
import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ._util import atomic_write_text
from .metrics import METRIC_NAMES
from .runner import aggregate, compare, format_band

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
CURVE_COLUMNS = ["sampler", "iteration", "mean", "p10", "p90"]


def curves_csv(bands):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for sampler, rows in bands.items():
        for row in rows:
            writer.writerow([sampler, row["iteration"], repr(row["mean"]), repr(row["p10"]), repr(row["p90"])])
    return buf.getvalue()


def read_curves_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"sampler": r["sampler"], "iteration": int(r["iteration"]), "mean": float(r["mean"]),
         "p10": float(r["p10"]), "p90": float(r["p90"])}
        for r in rows
    ]


def _nice_ticks(lo, hi, count=5):
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def curves_svg(bands, title, width=640, height=400):
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    all_iters = [r["iteration"] for rows in bands.values() for r in rows]
    lo = min(r["p10"] for rows in bands.values() for r in rows)
    hi = max(r["p90"] for rows in bands.values() for r in rows)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x_max = max(max(all_iters), 1)

    def sx(t):
        return left + pw * t / x_max

    def sy(v):
        return top + ph * (1 - (v - lo) / (hi - lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.2f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in range(0, x_max + 1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 18}" text-anchor="middle">{t}</text>')
    for v in _nice_ticks(lo, hi):
        out.append(f'<line x1="{left - 5}" y1="{sy(v):.2f}" x2="{left}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">iteration</text>')
    for k, (sampler, rows) in enumerate(bands.items()):
        color = PALETTE[k % len(PALETTE)]
        upper = " ".join(f"{sx(r['iteration']):.2f},{sy(r['p90']):.2f}" for r in rows)
        lower = " ".join(f"{sx(r['iteration']):.2f},{sy(r['p10']):.2f}" for r in reversed(rows))
        mean = " ".join(f"{sx(r['iteration']):.2f},{sy(r['mean']):.2f}" for r in rows)
        out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{mean}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 16 * k + 8
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}">{escape(sampler)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(rs, out_dir, metrics=None):
    """One curve CSV and one SVG plot per metric; returns the written paths."""
    out_dir = Path(out_dir)
    written = []
    for name in metrics or METRIC_NAMES.values():
        bands = aggregate(rs, name)
        csv_path = out_dir / f"curves-{name}.csv"
        svg_path = out_dir / f"plot-{name}.svg"
        atomic_write_text(csv_path, curves_csv(bands))
        atomic_write_text(svg_path, curves_svg(bands, name))
        written.extend([csv_path, svg_path])
    return written


def final_summary(rs, metric="Accuracy"):
    """Final-iteration band per sampler, with the best sampler(s) marked."""
    bands = aggregate(rs, metric)
    finals = {s: rows[-1] for s, rows in bands.items()}
    top = max(r["mean"] for r in finals.values())
    rows = []
    for sampler, r in finals.items():
        rows.append({
            "sampler": sampler,
            "mean": r["mean"],
            "p10": r["p10"],
            "p90": r["p90"],
            "half_spread": (r["p90"] - r["p10"]) / 2,
            "cell": format_band(r["mean"], r["p10"], r["p90"]),
            "best": bool(np.isclose(r["mean"], top, rtol=0, atol=1e-12)),
        })
    return rows


def dominated_by_none(rs, sampler, metric="Accuracy"):
    """True when no other sampler has a strictly higher final mean (consistency helper)."""
    return all(compare(rs, sampler, other, metric)[-1].sign >= 0
               for other in rs.samplers() if other != sampler)


def comparison_table(results_by_dataset, metric="Accuracy", fmt="text"):
    """Dataset x sampler matrix of final-iteration 'mean ± half-spread' cells."""
    lines = []
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dataset", "sampler", "mean", "half_spread", "cell", "best"])
        for dataset_id, rs in results_by_dataset.items():
            for row in final_summary(rs, metric):
                writer.writerow([dataset_id, row["sampler"], repr(row["mean"]), repr(row["half_spread"]),
                                 row["cell"], int(row["best"])])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps({d: final_summary(rs, metric) for d, rs in results_by_dataset.items()},
                          indent=2, sort_keys=True) + "\n"
    samplers = []
    for rs in results_by_dataset.values():
        for s in rs.samplers():
            if s not in samplers:
                samplers.append(s)
    header = ["dataset"] + samplers
    body = []
    for dataset_id, rs in results_by_dataset.items():
        cells = {r["sampler"]: ("*" if r["best"] else " ") + r["cell"] for r in final_summary(rs, metric)}
        body.append([dataset_id] + [cells.get(s, "-") for s in samplers])
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    for row in [header] + body:
        lines.append("  ".join(str(c).rjust(w) for c, w in zip(row, widths)))
    lines.append(f"(* best final-iteration mean {metric}; cells are mean ± half of p90-p10, in %)")
    return "\n".join(lines) + "\n"
