"""Render report CSVs (confusion matrices, filter responses) to PNG files.

Kept apart from the experiment core: everything here re-reads the exported
delimited files, so figures can be regenerated without recomputing anything.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _read_confusion_csv(path: Path):
    lines = path.read_text(encoding="utf-8").splitlines()
    labels = lines[0].split(",")[1:]
    counts = np.array([[int(v) for v in line.split(",")[1:]] for line in lines[1:]])
    return labels, counts


def render_confusion(csv_path: str | Path, out_path: str | Path | None = None,
                     normalize: bool = True) -> Path:
    """Heatmap of one confusion CSV; returns the written PNG path."""
    csv_path = Path(csv_path)
    labels, counts = _read_confusion_csv(csv_path)
    display = counts.astype(float)
    if normalize:
        row_sums = display.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            display = np.where(row_sums > 0, display / row_sums, 0.0)

    fig, ax = plt.subplots(figsize=(0.6 * len(labels) + 2.2, 0.6 * len(labels) + 1.8))
    im = ax.imshow(display, cmap="Blues", vmin=0.0,
                   vmax=1.0 if normalize else max(1, counts.max()))
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(csv_path.stem)
    for i in range(len(labels)):
        for j in range(len(labels)):
            value = display[i, j]
            text = f"{value:.2f}" if normalize else str(counts[i, j])
            ax.text(j, i, text, ha="center", va="center", fontsize=8,
                    color="white" if value > 0.6 * (1.0 if normalize else counts.max()) else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    out = Path(out_path) if out_path else csv_path.with_suffix(".png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_filter_response(csv_path: str | Path, out_path: str | Path | None = None) -> Path:
    """Line plot of the cumulative first-layer filter response CSV."""
    csv_path = Path(csv_path)
    lines = csv_path.read_text(encoding="utf-8").splitlines()[1:]
    data = np.array([[float(v) for v in line.split(",")] for line in lines])
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    ax.plot(data[:, 0], data[:, 1], lw=1.2)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("log cumulative magnitude")
    ax.set_title("first-layer filter response")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(out_path) if out_path else csv_path.with_suffix(".png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_report_dir(report_dir: str | Path) -> list[Path]:
    """Render every confusion CSV (and filter response, if present) in a
    report directory."""
    report_dir = Path(report_dir)
    written = []
    for csv_path in sorted(report_dir.glob("confusion_*.csv")):
        written.append(render_confusion(csv_path))
    filter_csv = report_dir / "filter_response.csv"
    if filter_csv.exists():
        written.append(render_filter_response(filter_csv))
    return written
