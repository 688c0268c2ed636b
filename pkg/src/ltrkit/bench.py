"""Desk-scale long-tailed benchmark: losses x {scheduler off, on}.

Data: ``num_classes`` Gaussian classes in ``dim`` dimensions with unit
noise, sizes decaying exponentially from ``max_count`` by ``imbalance``
overall, split 80/10/10 per class.  A linear model is trained for every
configuration and seed; test accuracy (overall and tail-macro) is averaged
over seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import ClassStats
from .losses import LossSpec
from .model import TrainConfig, train
from .numerics import seeded_rng
from .optim import EarlyStopConfig, OptimConfig, PlateauConfig
from .report import evaluate_predictions
from .sampler import SplitSpec, partition_long_tail, split_indices


@dataclass(frozen=True)
class BenchSpec:
    num_classes: int = 20
    dim: int = 16
    max_count: int = 2000
    imbalance: float = 100.0
    mean_scale: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    batch_size: int = 128
    max_epochs: int = 150
    lr: float = 0.1

    def class_counts(self) -> list[int]:
        c = self.num_classes
        if c == 1:
            return [self.max_count]
        return [int(round(self.max_count * self.imbalance ** (-i / (c - 1)))) for i in range(c)]


# (name, loss, optimizer kind); mirrors the rows of the comparison table
CONFIGS = (
    ("CE + Adam", LossSpec("ce"), "adam"),
    ("CE + AdamW", LossSpec("ce"), "adamw"),
    ("Focal + AdamW", LossSpec("focal", gamma=2.0), "adamw"),
    ("WCE + AdamW", LossSpec("wce", weight_scheme="inverse_freq"), "adamw"),
    ("LDAM + AdamW", LossSpec("ldam", c_max=0.5, scale=30.0), "adamw"),
)


def make_dataset(spec: BenchSpec, seed: int):
    """``(x, y)`` for the full long-tailed pool, deterministic in ``seed``."""
    rng = seeded_rng(seed, stream=7)
    means = rng.normal(spec.num_classes * spec.dim).reshape(spec.num_classes, spec.dim) * spec.mean_scale
    counts = spec.class_counts()
    y = np.repeat(np.arange(spec.num_classes), counts)
    x = means[y] + rng.normal(y.size * spec.dim).reshape(y.size, spec.dim)
    return x, y


def train_config(spec: BenchSpec, loss: LossSpec, optim_kind: str, scheduler: bool, seed: int) -> TrainConfig:
    return TrainConfig(
        loss=loss,
        optim=OptimConfig(kind=optim_kind, lr=spec.lr),
        scheduler=PlateauConfig() if scheduler else None,
        early_stop=EarlyStopConfig(),
        batch_size=spec.batch_size,
        max_epochs=spec.max_epochs,
        seed=seed,
    )


def run_one(spec: BenchSpec, loss: LossSpec, optim_kind: str, scheduler: bool, seed: int, data=None) -> dict:
    x, y = data if data is not None else make_dataset(spec, seed)
    tr, va, te = split_indices(y, SplitSpec((0.8, 0.1, 0.1), seed))
    stats = ClassStats(tuple(np.bincount(y[tr], minlength=spec.num_classes)))
    part = partition_long_tail(stats)
    cfg = train_config(spec, loss, optim_kind, scheduler, seed)
    ckpt, hist = train(x[tr], y[tr], x[va], y[va], cfg, num_classes=spec.num_classes)
    pred = ckpt.model.predict(x[te])
    rep = evaluate_predictions(y[te], pred, [f"c{i}" for i in range(spec.num_classes)], part)
    g = rep.group_acc
    return {
        "overall": rep.overall_top1,
        "tail_micro": g["tail"]["micro"],
        "tail_macro": g["tail"]["macro"],
        "macro": rep.macro_accuracy,
        "epochs": len(hist),
        "best_epoch": ckpt.epoch,
        "history": hist,
    }


@dataclass
class BenchResult:
    spec: BenchSpec
    summary: dict  # config name -> {"off"|"on": mean metrics}
    runs: list = field(default_factory=list)
    seconds: float = 0.0

    def table(self) -> str:
        lines = [
            "| LOSS + OPTIMISER | NO SCHEDULER (overall / tail) | PLATEAU SCHEDULER (overall / tail) |",
            "|---|---:|---:|",
        ]

        def cell(m):
            return f"{100 * m['overall']:.2f}% / {100 * m['tail_macro']:.2f}%"

        for name, modes in self.summary.items():
            lines.append(f"| {name} | {cell(modes['off'])} | {cell(modes['on'])} |")
        return "\n".join(lines) + "\n"

    def checks(self) -> dict[str, bool]:
        s = self.summary
        out = {"ldam_sched_tail_gt_ce_adam": s["LDAM + AdamW"]["on"]["tail_macro"] > s["CE + Adam"]["off"]["tail_macro"]}
        for name, modes in s.items():
            out[f"sched_ge_nosched[{name}]"] = modes["on"]["overall"] >= modes["off"]["overall"]
        return out

    def to_dict(self) -> dict:
        return {
            "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.spec.__dict__.items()},
            "summary": self.summary,
            "checks": self.checks(),
            "runs": [{k: v for k, v in r.items() if k != "history"} for r in self.runs],
        }


def run_benchmark(spec: BenchSpec = BenchSpec(), configs=CONFIGS, progress=None) -> BenchResult:
    t0 = time.perf_counter()
    keys = ("overall", "tail_micro", "tail_macro", "macro", "epochs")
    acc = {name: {"off": [], "on": []} for name, _, _ in configs}
    runs = []
    for seed in spec.seeds:
        data = make_dataset(spec, seed)
        for name, loss, opt in configs:
            for sched in (False, True):
                r = run_one(spec, loss, opt, sched, seed, data)
                r.update(config=name, scheduler=sched, seed=seed)
                runs.append(r)
                acc[name]["on" if sched else "off"].append(r)
                if progress is not None:
                    progress(r)
    summary = {
        name: {mode: {k: float(np.mean([r[k] for r in rs])) for k in keys} for mode, rs in modes.items()}
        for name, modes in acc.items()
    }
    return BenchResult(spec, summary, runs, time.perf_counter() - t0)
