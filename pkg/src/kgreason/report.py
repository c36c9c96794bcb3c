"""Report rendering: delimited files plus matplotlib figures."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport, render_report
from .training import TrainDiagnostics


def write_training_report(diag: TrainDiagnostics, outdir: str) -> list[str]:
    """Write epochs.tsv and loss_curve.png into `outdir`; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    tsv_path = os.path.join(outdir, "epochs.tsv")
    with open(tsv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\ttrain_loss\tce_loss\tdev_loss\tlr\n")
        for s in diag.epochs:
            fh.write(
                f"{s.epoch}\t{s.train_loss:.6f}\t{s.ce_loss:.6f}\t{s.dev_loss:.6f}\t{s.lr:.6g}\n"
            )
    fig_path = os.path.join(outdir, "loss_curve.png")
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [s.epoch for s in diag.epochs]
    if xs:
        ax.plot(xs, [s.train_loss for s in diag.epochs], label="train loss")
        ax.plot(xs, [s.dev_loss for s in diag.epochs], label="dev loss")
        ax.plot(xs, [s.ce_loss for s in diag.epochs], label="predictor CE")
        ax2 = ax.twinx()
        ax2.plot(xs, [s.lr for s in diag.epochs], color="gray", linestyle="--", label="lr")
        ax2.set_ylabel("learning rate")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [tsv_path, fig_path]


def write_eval_report(report: EvalReport, outdir: str) -> list[str]:
    """Write metrics.tsv and metrics.png into `outdir`; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    tsv_path = os.path.join(outdir, "metrics.tsv")
    with open(tsv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_report(report, tsv=True) + "\n")
    fig_path = os.path.join(outdir, "metrics.png")
    labels = ["MRR"] + [f"HITS@{k}" for k in sorted(report.hits)]
    values = [report.mrr * 100] + [report.hits[k] * 100 for k in sorted(report.hits)]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(labels, values, color="#4878d0")
    ax.set_ylabel("percent")
    ax.set_ylim(0, 100)
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.2f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [tsv_path, fig_path]
