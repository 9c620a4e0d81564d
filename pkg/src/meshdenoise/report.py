"""Delimited reports and matplotlib figures for the CLI report paths."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport
from .training import LogRecord


def write_eval_report(report: EvalReport, out_dir) -> list[Path]:
    """Write report.tsv plus an angular-error histogram figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    tsv = out_dir / "report.tsv"
    with open(tsv, "w", encoding="ascii") as fh:
        fh.write("metric\tvalue\n")
        fh.write(f"E_a_degrees\t{report.e_a:.6f}\n")
        fh.write(f"E_v_normalized\t{report.e_v:.6e}\n")
        fh.write(f"excluded_faces\t{report.excluded_faces}\n")
        fh.write(f"distance_samples\t{report.sample_count}\n")
    written.append(tsv)

    errors = report.per_face_degrees[~np.isnan(report.per_face_degrees)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(errors, bins=min(60, max(10, len(errors) // 20)), color="#4878a8")
    ax.axvline(report.e_a, color="#a84848", linestyle="--", label=f"mean {report.e_a:.2f}°")
    ax.set_xlabel("per-face angular error (degrees)")
    ax.set_ylabel("faces")
    ax.legend()
    fig.tight_layout()
    fig_path = out_dir / "angular_error_hist.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    written.append(fig_path)
    return written


def write_per_face_errors(per_face: np.ndarray, path) -> None:
    """One `face_index error_degrees` line per face; NaN marks excluded faces."""
    with open(path, "w", encoding="ascii") as fh:
        for i, err in enumerate(per_face):
            fh.write(f"{i} {err:.6f}\n")


def write_training_log(records: list[LogRecord], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("stage\tepoch\tmean_loss\tval_ea\n")
        for rec in records:
            fh.write(rec.line() + "\n")


def plot_training_curves(records: list[LogRecord], path) -> None:
    """Loss and validation-error curves, one line per cascade stage."""
    fig, (ax_loss, ax_ea) = plt.subplots(1, 2, figsize=(10, 4))
    stages = sorted({r.stage for r in records})
    for stage in stages:
        rows = [r for r in records if r.stage == stage]
        epochs = [r.epoch for r in rows]
        ax_loss.plot(epochs, [r.mean_loss for r in rows], marker="o", label=f"stage {stage + 1}")
        ax_ea.plot(epochs, [r.val_ea for r in rows], marker="o", label=f"stage {stage + 1}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean training loss")
    ax_loss.set_yscale("log")
    ax_loss.legend()
    ax_ea.set_xlabel("epoch")
    ax_ea.set_ylabel("validation E_a (degrees)")
    ax_ea.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
