"""Matplotlib figures rendered next to the delimited report files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GROUP_COLORS = {"head": "#3b6fb6", "tail": "#e58fb0", "few_shot": "#4caf50"}
POSITIVE = "#3b6fb6"
NEGATIVE = "#b0b0b0"

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
    "svg.hashsalt": "ltrkit",
}

# fixed PNG metadata keeps re-rendered figures byte-stable
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = _PNG_META if path.suffix.lower() == ".png" else None
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def plot_class_distribution(counts: Sequence[int], names: Sequence[str], partition=None, path="distribution.png"):
    """Log-scale class cardinalities, coloured by head / tail / few-shot."""
    counts = np.asarray(counts)
    order = np.argsort(-counts, kind="stable")
    colors = []
    for c in order:
        g = partition.group_of(int(c)) if partition is not None else "tail"
        colors.append(GROUP_COLORS[g])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.18 * len(counts)), 3.0))
        ax.bar(np.arange(len(order)), np.maximum(counts[order], 1), color=colors)
        ax.set_yscale("log")
        ax.set_xticks(np.arange(len(order)))
        ax.set_xticklabels([names[c] for c in order], rotation=90)
        ax.set_ylabel("samples")
        if partition is not None:
            handles = [plt.Rectangle((0, 0), 1, 1, color=GROUP_COLORS[g]) for g in GROUP_COLORS]
            ax.legend(handles, ["Head", "Tail", "Few-shot"], frameon=False)
        return _save(fig, path)


def plot_training_curves(history: Sequence[dict], path="training.png", best_epoch: int | None = None):
    """Accuracy and loss (train vs val) with their gaps; dashed line at the
    early-stop epoch and dotted line at the selected checkpoint."""
    ep = np.array([h["epoch"] for h in history])
    stop = [h["epoch"] for h in history if "early_stop" in h.get("events", [])]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 2, figsize=(9, 5.5), sharex=True)
        for row, key in enumerate(("acc", "loss")):
            tr = np.array([h[f"train_{key}"] for h in history])
            va = np.array([h[f"val_{key}"] for h in history])
            ax, gap = axes[row]
            ax.plot(ep, tr, label="train")
            ax.plot(ep, va, label="validation")
            ax.set_ylabel(key)
            ax.legend(frameon=False)
            gap.plot(ep, tr - va, color="k")
            gap.axhline(0, color="0.7", lw=0.8)
            gap.set_ylabel(f"train - val {key}")
            for a in (ax, gap):
                for s in stop:
                    a.axvline(s, ls="--", color="r", lw=0.9)
                if best_epoch is not None:
                    a.axvline(best_epoch, ls=":", color="g", lw=0.9)
        for a in axes[1]:
            a.set_xlabel("epoch")
        return _save(fig, path)


def plot_per_class_accuracy(report, path="per_class.png"):
    pcs = [p for p in report.per_class if p.accuracy is not None]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.3 * len(pcs)), 3.0))
        colors = [GROUP_COLORS.get(report.partition.group_of(p.class_id), NEGATIVE)
                  if report.partition is not None else POSITIVE for p in pcs]
        ax.bar(range(len(pcs)), [100 * p.accuracy for p in pcs], color=colors)
        ax.set_xticks(range(len(pcs)))
        ax.set_xticklabels([f"{p.name} ({p.prevalence})" for p in pcs], rotation=90)
        ax.set_ylabel("top-1 accuracy (%)")
        ax.set_ylim(0, 100)
        return _save(fig, path)


def plot_improvement(chart, path="improvement.png"):
    """Per-class accuracy deltas; improved classes in blue."""
    rows = chart.rows
    deltas = np.array([r[4] for r in rows])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.2 * len(rows)), 3.0))
        ax.bar(range(len(rows)), deltas, color=[POSITIVE if d > 0 else NEGATIVE for d in deltas])
        ax.axhline(0, color="k", lw=0.8)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels([r[1] for r in rows], rotation=90)
        ax.set_ylabel("accuracy change (pts)")
        ax.set_title(f"overall {chart.overall_delta:+.2f} pts; {chart.improved} up, {chart.regressed} down")
        return _save(fig, path)


def plot_prediction_distribution(report, class_id: int, path="collapse.png"):
    dist = report.prediction_distribution(class_id)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 0.35 * len(dist) + 1.0))
        names = [report.classes[j] for j, _, _ in dist][::-1]
        pcts = [p for _, _, p in dist][::-1]
        colors = [POSITIVE if report.classes[class_id] == n else NEGATIVE for n in names]
        ax.barh(names, pcts, color=colors)
        ax.set_xlabel(f"share of '{report.classes[class_id]}' samples (%)")
        return _save(fig, path)


def plot_benchmark(summary: dict, path="benchmark.png"):
    """Overall and tail-macro accuracy per loss, scheduler off vs on."""
    configs = list(summary)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
        width = 0.38
        x = np.arange(len(configs))
        for ax, key, title in zip(axes, ("overall", "tail_macro"), ("overall accuracy", "tail macro accuracy")):
            off = [100 * summary[c]["off"][key] if summary[c].get("off") else np.nan for c in configs]
            on = [100 * summary[c]["on"][key] if summary[c].get("on") else np.nan for c in configs]
            ax.bar(x - width / 2, off, width, label="no scheduler", color=NEGATIVE)
            ax.bar(x + width / 2, on, width, label="plateau scheduler", color=POSITIVE)
            ax.set_xticks(x)
            ax.set_xticklabels(configs, rotation=30, ha="right")
            ax.set_title(title)
            ax.set_ylabel("%")
        axes[0].legend(frameon=False)
        return _save(fig, path)
