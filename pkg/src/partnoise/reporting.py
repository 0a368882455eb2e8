"""Report writers: stable JSON, delimited tables, and rendered figures.

emit_report takes the dict produced by run_pipeline or
approximation_sweep and writes report.json (sorted keys), CSV tables
with methods as rows and noise levels as columns, and PNG figures next
to them. Timings stay in the JSON only; they are the one part of a
report that is not deterministic.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError

__all__ = ["emit_report"]


def _pct_cell(stats: dict) -> str:
    return f"{100 * stats['mean']:.2f}±{100 * stats['std']:.2f}"


def _raw_cell(stats: dict) -> str:
    return f"{stats['mean']:.4f}±{stats['std']:.4f}"


def _write_table(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _accuracy_table(report: dict, directory: Path) -> None:
    accuracy = report["accuracy"]
    taus = list(accuracy)
    methods = report.get("methods") or sorted(
        {kind for cell in accuracy.values() for kind in cell}
    )
    rows = []
    for method in methods:
        cells = [
            _pct_cell(accuracy[tau][method]) if method in accuracy[tau] else ""
            for tau in taus
        ]
        rows.append([method, *cells])
    _write_table(directory / "accuracy.csv", ["method", *taus], rows)

    if report.get("ttests"):
        pairs = sorted({p for cell in report["ttests"].values() for p in cell})
        rows = []
        for pair in pairs:
            cells = [
                f"{report['ttests'][tau][pair]:.6g}"
                if pair in report["ttests"].get(tau, {})
                else ""
                for tau in taus
            ]
            rows.append([pair, *cells])
        _write_table(directory / "ttests.csv", ["pair", *taus], rows)


def _accuracy_figure(report: dict, directory: Path) -> None:
    accuracy = report["accuracy"]
    taus = list(accuracy)
    x = [float(t) for t in taus]
    methods = report.get("methods") or sorted(
        {kind for cell in accuracy.values() for kind in cell}
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        pts = [(xi, accuracy[tau].get(method)) for xi, tau in zip(x, taus)]
        pts = [(xi, st) for xi, st in pts if st is not None]
        if not pts:
            continue
        xs = [p[0] for p in pts]
        means = [100 * p[1]["mean"] for p in pts]
        stds = [100 * p[1]["std"] for p in pts]
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=method)
    ax.set_xlabel("noise level")
    ax.set_ylabel("test accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(directory / "accuracy.png", dpi=150)
    plt.close(fig)


def _approx_rows(entry: dict) -> list[tuple[str, dict]]:
    rows = [("class_dependent", entry["class_dependent"])]
    if "revised" in entry:
        rows.append(("revised", entry["revised"]))
    for r in sorted(entry["ptd"], key=int):
        rows.append((f"ptd_r={r}", entry["ptd"][r]))
    return rows


def _approximation_table(report: dict, directory: Path) -> None:
    approx = report["approximation"]
    taus = list(approx)
    labels = []
    for tau in taus:
        for label, _ in _approx_rows(approx[tau]):
            if label not in labels:
                labels.append(label)
    rows = []
    for label in labels:
        cells = []
        for tau in taus:
            match = dict(_approx_rows(approx[tau])).get(label)
            cells.append(_raw_cell(match) if match else "")
        rows.append([label, *cells])
    _write_table(directory / "approximation.csv", ["method", *taus], rows)


def _approximation_figure(report: dict, directory: Path) -> None:
    approx = report["approximation"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for tau, entry in approx.items():
        rs = sorted(entry["ptd"], key=int)
        xs = [int(r) for r in rs]
        means = [entry["ptd"][r]["mean"] for r in rs]
        stds = [entry["ptd"][r]["std"] for r in rs]
        line = ax.errorbar(
            xs, means, yerr=stds, marker="o", capsize=3, label=f"parts, tau={tau}"
        )
        ax.axhline(
            entry["class_dependent"]["mean"],
            linestyle="--",
            color=line.lines[0].get_color(),
            alpha=0.6,
        )
    ax.set_xlabel("number of parts r")
    ax.set_ylabel("mean l1 row error")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(directory / "approximation.png", dpi=150)
    plt.close(fig)


def emit_report(report: dict, directory: str | Path) -> list[Path]:
    """Write report.json, CSV tables, and figures; return written paths."""
    if not isinstance(report, dict):
        raise DataError("report must be a dict")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "report.json"]
    written[0].write_text(json.dumps(report, sort_keys=True, indent=2))

    if report.get("accuracy"):
        _accuracy_table(report, directory)
        _accuracy_figure(report, directory)
        written += [directory / "accuracy.csv", directory / "accuracy.png"]
        if report.get("ttests"):
            written.append(directory / "ttests.csv")
    if report.get("approximation"):
        _approximation_table(report, directory)
        _approximation_figure(report, directory)
        written += [directory / "approximation.csv", directory / "approximation.png"]
    return written
