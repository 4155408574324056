"""Delimited tables and matplotlib figures for the CLI report paths."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_csv(path, header, rows) -> str:
    """Write rows to ``path`` (or nowhere if None) and return the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_loss_curves(history: dict, path) -> None:
    """One line per trained stage; the exposure history is the LAD objective."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for stage, curve in history.items():
        if len(curve):
            ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", ms=3, label=stage)
    ax.set_xlabel("epoch (exposure: search step)")
    ax.set_ylabel("mean L1")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_stage_metrics(report, path) -> None:
    d = report.as_dict()
    names = list(report.COLUMNS)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
    a1.bar(names, [d[n]["psnr"] for n in names], color="tab:blue")
    a1.set_ylabel("PSNR (dB)")
    a2.bar(names, [d[n]["ssim"] for n in names], color="tab:orange")
    a2.set_ylabel("SSIM")
    a2.set_ylim(0, 1)
    _save(fig, path)


def plot_scores(states, path, best_index=None) -> None:
    scores = [s.score for s in states]
    fig, ax = plt.subplots(figsize=(7, 3))
    colors = ["tab:gray"] * len(scores)
    if best_index is not None:
        colors[best_index] = "tab:red"
    ax.bar(np.arange(len(scores)), scores, color=colors)
    ax.set_xlabel("candidate")
    ax.set_ylabel("score (lower is better)")
    _save(fig, path)


def save_png(img, path) -> None:
    """Write an 8-bit RGB array as PNG."""
    plt.imsave(path, np.asarray(img, dtype=np.uint8))
