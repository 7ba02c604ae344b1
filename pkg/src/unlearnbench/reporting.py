"""Render benchmark reports and study tables as JSON, CSV and markdown."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, fields
from pathlib import Path

from .metrics import EvalRecord

RECORD_COLUMNS = [f.name for f in fields(EvalRecord)]
_NAMES = {
    "original": "Orig.", "gold": "Gold", "ft": "FT", "ng": "NG", "ng_plus": "NG+", "cf_k": "CF-k",
    "unsir": "UNSIR", "bt": "BT", "bt_light": "BT-L", "scrub": "SCRUB",
}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in report.records:
        d = r.to_dict()
        w.writerow([_cell(d[c]) for c in RECORD_COLUMNS])
    return buf.getvalue()


def _fmt(v, digits=3):
    return "n/a" if v is None else f"{v:.{digits}f}"


def _speedup(v):
    if v is None:
        return "n/a"
    return f"{v:.4g}x" if v < 1e4 else f"{v:.0f}x"


def render_markdown(report):
    """One comparison table per seed: baselines first, then each method's best row."""
    best = report.best_rows()
    out = []
    for seed in report.seeds():
        out.append(f"### Seed {seed}\n")
        out.append("| Method | lr | F1_T | F1_F | MIA | GUM | Speedup |")
        out.append("|---|---|---|---|---|---|---|")
        for name in ("original", "gold"):
            r = report.baseline(seed, name)
            out.append(f"| {_NAMES[name]} | - | {_fmt(r.f1_test)} | {_fmt(r.f1_forget)} | {_fmt(r.mia)} "
                       f"| {_fmt(r.gum)} | {_speedup(r.speedup)} |")
        for m in report.methods():
            r = best.get((seed, m))
            if r is None:
                out.append(f"| {_NAMES.get(m, m)} | - | failed | failed | failed | failed | failed |")
                continue
            out.append(f"| {_NAMES.get(m, m)} | {r.lr:g} | {_fmt(r.f1_test)} | {_fmt(r.f1_forget)} "
                       f"| {_fmt(r.mia)} | {_fmt(r.gum)} | {_speedup(r.speedup)} |")
        out.append("")
    return "\n".join(out)


def emit_report(report, formats, out_dir, stem="report"):
    """Write the report in each requested format; returns the written paths."""
    renderers = {"json": (report.to_json, "json"), "csv": (lambda: render_csv(report), "csv"),
                 "markdown": (lambda: render_markdown(report), "md")}
    if not report.records:
        raise ValueError("cannot emit an empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        render, ext = renderers[fmt]
        path = out_dir / f"{stem}.{ext}"
        path.write_text(render())
        paths.append(path)
    return paths


def rows_to_csv(rows):
    """Plot-ready CSV for sweep or ablation rows (dataclass instances)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(rows[0])]
    w.writerow(names)
    for row in rows:
        d = asdict(row)
        w.writerow([_cell(d[n]) for n in names])
    return buf.getvalue()


def rows_to_markdown(rows):
    names = [f.name for f in fields(rows[0])]
    lines = ["| " + " | ".join(names) + " |", "|" + "---|" * len(names)]
    for row in rows:
        d = asdict(row)
        lines.append("| " + " | ".join(_fmt(d[n]) if isinstance(d[n], float) else _cell(d[n]) for n in names) + " |")
    return "\n".join(lines) + "\n"
