"""Report files for a cross-validation run: JSON, CSV tables and an SVG box plot."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

from .evaluation import RunReport
from .training import write_loss_history

REPORT_NAME = "run_report.json"
THRESHOLD_TABLE = "attention_stats.csv"
JOINT_TABLE = "joint_attention_summary.csv"
BOXPLOT = "boxplot.svg"


class ReportError(ValueError):
    pass


def report_json(report: RunReport) -> str:
    """Canonical JSON text; key order and float formatting are fixed."""
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def read_run_report(path) -> RunReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    try:
        return RunReport.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ReportError(f"{path}: not a run report ({exc})") from exc


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def threshold_table(report: RunReport) -> str:
    stats = report.attention_stats
    rows = [[repr(t), repr(c)] for t, c in zip(stats["thresholds"], stats["counts"])]
    rows.append(["average_attention", repr(stats["average_attention"])])
    return _csv_text(["threshold", "avg_joints_at_or_above"], rows)


def joint_table(report: RunReport) -> str:
    keys = ("min", "q1", "median", "q3", "max")
    rows = [[r["joint"]] + [repr(r[k]) for k in keys] for r in report.attention_stats["per_joint"]]
    return _csv_text(["joint", *keys], rows)


def fold_attention_table(report: RunReport, fold) -> str:
    rows = [[name, repr(a)] for name, a in zip(report.joint_names, fold.attention)]
    return _csv_text(["joint", "attention"], rows)


def boxplot_svg(per_joint, width_per_joint: int = 28, height: int = 320) -> str:
    """Per-joint attention box plot; the y axis spans [0, 1].

    ``per_joint`` rows carry ``joint``, ``min``, ``q1``, ``median``, ``q3``
    and ``max``. Each joint gets one ``rect.box`` (the interquartile range),
    one ``line.median`` and a whisker from min to max.
    """
    left, right, top, bottom = 48, 12, 16, 96
    plot_h = height - top - bottom
    width = left + right + width_per_joint * max(len(per_joint), 1)

    def y(v):
        return top + (1.0 - min(max(v, 0.0), 1.0)) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line class="axis" x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        ty = f"{y(tick):.2f}"
        out.append(f'<line class="tick" x1="{left - 4}" y1="{ty}" x2="{left}" y2="{ty}" stroke="black"/>')
        out.append(
            f'<text x="{left - 6}" y="{ty}" font-size="10" text-anchor="end" dominant-baseline="middle">{tick:g}</text>'
        )
    out.append(
        f'<text x="12" y="{top + plot_h / 2:.2f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 12 {top + plot_h / 2:.2f})">attention</text>'
    )
    half = width_per_joint * 0.3
    for i, row in enumerate(per_joint):
        cx = left + width_per_joint * (i + 0.5)
        y1, y3, ymed = y(row["q3"]), y(row["q1"]), y(row["median"])
        out.append(
            f'<line class="whisker" x1="{cx:.2f}" y1="{y(row["max"]):.2f}" x2="{cx:.2f}" '
            f'y2="{y(row["min"]):.2f}" stroke="black"/>'
        )
        out.append(
            f'<rect class="box" x="{cx - half:.2f}" y="{y1:.2f}" width="{2 * half:.2f}" '
            f'height="{max(y3 - y1, 0.0):.2f}" fill="#4a7fd4" stroke="#1f3f7a"/>'
        )
        out.append(
            f'<line class="median" x1="{cx - half:.2f}" y1="{ymed:.2f}" x2="{cx + half:.2f}" '
            f'y2="{ymed:.2f}" stroke="#f2c80f" stroke-width="2"/>'
        )
        ly = top + plot_h + 8
        out.append(
            f'<text x="{cx:.2f}" y="{ly}" font-size="10" text-anchor="end" '
            f'transform="rotate(-60 {cx:.2f} {ly})">{escape(str(row["joint"]))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_reports(report: RunReport, out_dir) -> list[Path]:
    """Write every report file for ``report`` into ``out_dir``.

    All content is rendered before the first write, so an invalid report
    leaves the directory untouched. Returns the paths written.
    """
    if not report.folds:
        raise ReportError("report has no folds; nothing written")
    out_dir = Path(out_dir)
    files: dict[str, str] = {REPORT_NAME: report_json(report)}
    if report.attention_stats is not None:
        files[THRESHOLD_TABLE] = threshold_table(report)
        files[JOINT_TABLE] = joint_table(report)
        files[BOXPLOT] = boxplot_svg(report.attention_stats["per_joint"])
        for fold in report.folds:
            files[f"fold_{fold.fold_index}_attention.csv"] = fold_attention_table(report, fold)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out_dir / name
            path.write_text(text)
            written.append(path)
        for fold in report.folds:
            if fold.history:
                path = out_dir / f"fold_{fold.fold_index}_loss.csv"
                write_loss_history(fold.history, path)
                written.append(path)
    except OSError as exc:
        where = exc.filename or out_dir
        raise ReportError(f"{where}: {exc.strerror or exc}") from exc
    return written
