"""Tables and figures from a results directory written by :func:`run_experiment`.

Tables have one row per (dataset, L-H) and one column per (strategy, bp_space),
in config order. Cells show the mean over seeds and, in Markdown, the
standard deviation in parentheses; the lowest mean of each row is bold.
The last row gives, for every column ``c``, the mean over rows of
``(b - c) / b`` where ``b`` is the first column.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .exceptions import MissingResults  # noqa: E402

MISSING = "—"
TABLE_SPLITS = ("Test1", "Test2")
METRICS = ("MSE", "nMSE")
_SVG_RC = {"svg.hashsalt": "revnorm", "svg.fonttype": "path", "path.simplify": False}


def load_results(results_dir) -> dict:
    path = Path(results_dir) / "results.json"
    if not path.is_file():
        raise MissingResults(f"no results.json in {results_dir}")
    try:
        return json.loads(path.read_text())
    except ValueError as exc:
        raise MissingResults(f"unreadable results.json: {exc}") from None


def build_table(results: dict, split: str, metric: str):
    """Returns ``(row_labels, col_labels, cells)``; ``cells[i][j]`` is ``(mean, std)`` or None."""
    cfg = results["config"]
    cols = [(c["strategy"], c["bp_space"]) for c in cfg["cells"]]
    lookup = {}
    for e in results["entries"]:
        stats = e["metrics"].get(split, {}).get(metric)
        if stats is not None:
            lookup[(e["dataset"], f"{e['L']}-{e['H']}", e["strategy"], e["bp_space"])] = (stats["mean"], stats["std"])
    rows = []
    for e in results["entries"]:
        row = (e["dataset"], f"{e['L']}-{e['H']}")
        if row not in rows:
            rows.append(row)
    cells = [[lookup.get(row + col) for col in cols] for row in rows]
    return [f"{d} {s}" for d, s in rows], [f"{s} ({b} BP)" for s, b in cols], cells


def improvements(cells):
    """Mean over rows of ``(b - c) / b`` per column, ``b`` the first column; None if no row has both."""
    out = []
    for j in range(len(cells[0]) if cells else 0):
        rel = [(row[0][0] - row[j][0]) / row[0][0] for row in cells
               if row[0] is not None and row[j] is not None and row[0][0] != 0]
        out.append(sum(rel) / len(rel) if rel else None)
    return out


def _best(row):
    present = [c[0] for c in row if c is not None]
    return min(present) if present else None


def to_markdown(rows, cols, cells, title="") -> str:
    lines = [f"**{title}**", ""] if title else []
    lines.append("| | " + " | ".join(cols) + " |")
    lines.append("|---|" + "---|" * len(cols))
    for label, row in zip(rows, cells):
        best = _best(row)
        parts = []
        for c in row:
            if c is None:
                parts.append(MISSING)
                continue
            text = f"{c[0]:.4g} ({c[1]:.2g})"
            parts.append(f"**{text}**" if c[0] == best else text)
        lines.append(f"| {label} | " + " | ".join(parts) + " |")
    imp = improvements(cells)
    lines.append("| Improvements | " + " | ".join(MISSING if v is None else f"{100 * v:.2f}%" for v in imp) + " |")
    return "\n".join(lines) + "\n"


def to_csv(rows, cols, cells) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["row"]
    for c in cols:
        header += [f"{c} mean", f"{c} std"]
    writer.writerow(header)
    for label, row in zip(rows, cells):
        out = [label]
        for c in row:
            out += ["", ""] if c is None else [repr(c[0]), repr(c[1])]
        writer.writerow(out)
    writer.writerow(["Improvements"] + sum((["" if v is None else repr(v), ""] for v in improvements(cells)), []))
    return buf.getvalue()


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_overlay(doc: dict, path) -> None:
    """Look-back, ground-truth horizon and each cell's forecast for one window."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        L = len(doc["x"])
        H = len(doc["y"])
        ax.plot(range(L), doc["x"], color="black", lw=1.2, label="look-back")
        ax.plot(range(L, L + H), doc["y"], color="black", lw=1.2, ls="--", label="ground truth")
        for name in sorted(doc["predictions"]):
            ax.plot(range(L, L + H), doc["predictions"][name], lw=1.0, label=name)
        ax.axvline(L - 0.5, color="grey", lw=0.6)
        ax.set_xlabel("time step")
        ax.set_title(f"user {doc['user']}, start {doc['start']}")
        ax.legend(fontsize=7, loc="best")
        fig.tight_layout()
        _save_svg(fig, path)


def plot_user_stats(csv_path, path) -> None:
    """Per-user (mean, std) over the training period, training vs. new users."""
    groups = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["group"], ([], []))
            groups[row["group"]][0].append(float(row["mean"]))
            groups[row["group"]][1].append(float(row["std"]))
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        for (group, (mu, sd)), marker in zip(sorted(groups.items()), ("o", "x")):
            ax.scatter(mu, sd, s=14, marker=marker, label=f"{group} users")
        ax.set_xlabel("mean")
        ax.set_ylabel("standard deviation")
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save_svg(fig, path)


def emit_report(results_dir, out_dir=None) -> list:
    """Write Markdown/CSV tables and SVG plots; returns the written paths."""
    results_dir = Path(results_dir)
    results = load_results(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    md_parts = []
    for split in TABLE_SPLITS:
        for metric in METRICS:
            rows, cols, cells = build_table(results, split, metric)
            if not any(c is not None for row in cells for c in row):
                continue
            md = to_markdown(rows, cols, cells, title=f"{split} {metric}")
            md_parts.append(md)
            p = out_dir / f"table_{split}_{metric}.csv"
            p.write_text(to_csv(rows, cols, cells))
            written.append(p)
    p = out_dir / "tables.md"
    p.write_text("\n".join(md_parts))
    written.append(p)

    artifacts = results_dir / "artifacts"
    for overlay in sorted(artifacts.glob("overlay_*.json")):
        p = out_dir / f"{overlay.stem}.svg"
        plot_overlay(json.loads(overlay.read_text()), p)
        written.append(p)
    if (artifacts / "user_stats.csv").is_file():
        p = out_dir / "user_stats.svg"
        plot_user_stats(artifacts / "user_stats.csv", p)
        written.append(p)
    return written
