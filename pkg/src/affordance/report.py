"""CSV stats tables, deterministic SVG line plots and a summary table."""

from __future__ import annotations

import csv
import io
from collections import defaultdict

from .errors import SchemaError

STATS_COLUMNS = ("run_id", "paradigm", "metric", "step", "value")
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _num(v):
    return format(float(v), ".6g")


def write_csv(path, header, rows):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_stats(path, required=STATS_COLUMNS):
    """Rows of a stats CSV as dicts; raise SchemaError naming any missing column."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    for i, row in enumerate(rows):
        try:
            row["step"] = int(row["step"])
            row["value"] = float(row["value"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: row {i + 2} has a non-numeric step or value") from exc
    return rows


def group_series(rows):
    """``{metric: {(paradigm, run_id): [(step, value), ...]}}`` with sorted keys."""
    out = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[r["metric"]][(r["paradigm"], r["run_id"])].append((r["step"], r["value"]))
    return {m: {k: sorted(v) for k, v in sorted(s.items())} for m, s in sorted(out.items())}


def _escape(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def line_plot_svg(series, title="", xlabel="step", ylabel="value", width=480, height=320):
    """SVG 1.1 text for named ``[(x, y), ...]`` series; a single point is drawn as a dot."""
    pad_l, pad_r, pad_t, pad_b = 56, 120, 28, 40
    xs = [x for pts in series.values() for x, _ in pts] or [0.0]
    ys = [y for pts in series.values() for _, y in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_escape(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
    ]
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{pad_l - 4}" y="{py(yv) + 4:.1f}" text-anchor="end" font-size="10">{_num(yv)}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{pad_t + ph + 14}" text-anchor="middle" font-size="10">{_num(xv)}</text>')
    out.append(f'<text x="{pad_l + pw / 2:.1f}" y="{height - 6}" text-anchor="middle" font-size="11">{_escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{pad_t + ph / 2:.1f}" text-anchor="middle" font-size="11" '
               f'transform="rotate(-90 12 {pad_t + ph / 2:.1f})">{_escape(ylabel)}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        if len(pts) > 1:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>')
        ly = pad_t + 14 * i + 8
        out.append(f'<rect x="{pad_l + pw + 10}" y="{ly - 6}" width="10" height="3" fill="{color}"/>')
        out.append(f'<text x="{pad_l + pw + 24}" y="{ly}" font-size="10">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_rows(rows):
    """Per (paradigm, metric): run count, mean of the last-step value, min and max."""
    last = {}
    for r in rows:
        key = (r["paradigm"], r["metric"], r["run_id"])
        if key not in last or r["step"] >= last[key][0]:
            last[key] = (r["step"], r["value"])
    agg = defaultdict(list)
    for (paradigm, metric, _), (_, v) in sorted(last.items()):
        agg[(paradigm, metric)].append(v)
    return [[p, m, len(v), _num(sum(v) / len(v)), _num(min(v)), _num(max(v))] for (p, m), v in sorted(agg.items())]


SUMMARY_COLUMNS = ("paradigm", "metric", "n_runs", "final_mean", "final_min", "final_max")
