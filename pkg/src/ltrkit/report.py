"""Confusion-matrix evaluation, group accuracies, collapse analysis and
report emission (JSON, CSV, markdown, LaTeX rows).

Evaluation only runs the model forward pass and an argmax; loss weights
and LDAM margins never enter it.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from typing import Sequence

import numpy as np

from .data import LabelMap, LongTailPartition, SampleRecord, ValidationError
from .model import Checkpoint, featurize

GROUPS = ("head", "tail", "few_shot")


def round_half_up(value, digits: int) -> float:
    """Decimal rounding with ties away from zero, exact for rationals."""
    q = Fraction(value) if not isinstance(value, Fraction) else value
    scale = 10**digits
    sign = -1 if q < 0 else 1
    return sign * floor(abs(q) * scale + Fraction(1, 2)) / scale


def percent(num: int, den: int, digits: int) -> float:
    return round_half_up(Fraction(100 * int(num), int(den)), digits)


@dataclass(frozen=True)
class PerClass:
    class_id: int
    name: str
    accuracy: float | None
    prevalence: int


class EvalReport:
    """Evaluation outcome; every metric is derived from the confusion matrix.

    ``confusion[i, j]`` counts samples of true class ``i`` predicted as ``j``.
    """

    def __init__(self, classes: Sequence[str], confusion, partition: LongTailPartition | None = None,
                 meta: dict | None = None):
        self.classes = tuple(classes)
        cm = np.asarray(confusion, dtype=np.int64)
        c = len(self.classes)
        if cm.shape != (c, c):
            raise ValidationError(f"confusion matrix must be {c}x{c}, got {cm.shape}")
        if (cm < 0).any():
            raise ValidationError("confusion matrix has negative entries")
        self.confusion = cm
        self.partition = partition
        self.meta = dict(meta or {})

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())

    @property
    def prevalence(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def overall_top1(self) -> float:
        n = self.num_samples
        return float(np.trace(self.confusion) / n) if n else float("nan")

    def class_accuracy(self, class_id: int) -> float | None:
        n = int(self.prevalence[class_id])
        return None if n == 0 else float(self.confusion[class_id, class_id] / n)

    @property
    def per_class(self) -> list[PerClass]:
        return [PerClass(i, name, self.class_accuracy(i), int(self.prevalence[i]))
                for i, name in enumerate(self.classes)]

    @property
    def macro_accuracy(self) -> float | None:
        accs = [p.accuracy for p in self.per_class if p.accuracy is not None]
        return float(np.mean(accs)) if accs else None

    def group_accuracy(self, members) -> dict:
        ids = sorted(members)
        rows = self.prevalence[ids].sum() if ids else 0
        micro = float(self.confusion[ids, ids].sum() / rows) if rows else None
        accs = [self.class_accuracy(i) for i in ids]
        accs = [a for a in accs if a is not None]
        macro = float(np.mean(accs)) if accs else None
        return {"micro": micro, "macro": macro, "classes": len(ids), "samples": int(rows)}

    @property
    def group_acc(self) -> dict:
        if self.partition is None:
            return {}
        return {g: self.group_accuracy(m) for g, m in self.partition.groups().items()}

    def prediction_distribution(self, class_id: int) -> list[tuple[int, int, float]]:
        """``(predicted id, count, percent)`` sorted by count desc then id."""
        n = int(self.prevalence[class_id])
        if n == 0:
            raise ValidationError(f"class {self.classes[class_id]!r}: no samples")
        row = self.confusion[class_id]
        items = [(j, int(row[j])) for j in np.flatnonzero(row)]
        items.sort(key=lambda t: (-t[1], t[0]))
        return [(int(j), cnt, percent(cnt, n, 1)) for j, cnt in items]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "partition": None if self.partition is None else self.partition.to_dict(),
            "num_samples": self.num_samples,
            "overall_top1": self.overall_top1,
            "macro_accuracy": self.macro_accuracy,
            "group_acc": self.group_acc,
            "per_class": [
                {"class_id": p.class_id, "class": p.name, "accuracy": p.accuracy, "prevalence": p.prevalence}
                for p in self.per_class
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        part = d.get("partition")
        return cls(d["classes"], d["confusion"], None if part is None else LongTailPartition.from_dict(part),
                   d.get("meta"))

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (self.classes == other.classes and np.array_equal(self.confusion, other.confusion)
                and self.partition == other.partition and self.meta == other.meta)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def evaluate_predictions(y_true, y_pred, classes: Sequence[str], partition=None, meta=None) -> EvalReport:
    if len(y_true) == 0:
        raise ValidationError("cannot evaluate an empty test set")
    return EvalReport(classes, confusion_matrix(y_true, y_pred, len(classes)), partition, meta)


def _label_translation(labels: LabelMap, ckpt_classes: Sequence[str], mapping: dict | None) -> np.ndarray:
    ckpt_index = {n: i for i, n in enumerate(ckpt_classes)}
    mapping = mapping or {}
    table, unmatched = [], []
    for name in labels.classes:
        target = mapping.get(name, name)
        if target not in ckpt_index:
            unmatched.append(name)
            table.append(-1)
        else:
            table.append(ckpt_index[target])
    if unmatched:
        raise ValidationError(f"label-space mismatch; unmatched manifest classes: {unmatched}")
    return np.asarray(table, dtype=np.int64)


def evaluate(
    checkpoint: Checkpoint,
    records: Sequence[SampleRecord],
    labels: LabelMap,
    partition: LongTailPartition | None = None,
    mapping: dict | None = None,
    **featurize_kw,
) -> EvalReport:
    """Argmax predictions of ``checkpoint`` on ``records`` (ties -> lowest id)."""
    if not records:
        raise ValidationError("cannot evaluate an empty test set")
    classes = checkpoint.classes or labels.classes
    table = _label_translation(labels, classes, mapping)
    x, kept = featurize(records, **featurize_kw)
    if not kept:
        raise ValidationError("no test record could be featurized")
    y = table[np.asarray([records[i].label for i in kept], dtype=np.int64)]
    pred = checkpoint.model.predict(x)
    meta = {"checkpoint_epoch": checkpoint.epoch, "skipped": len(records) - len(kept)}
    return EvalReport(classes, confusion_matrix(y, pred, len(classes)), partition, meta)


# Emission

CSV_HEADER = ("class_id", "class", "group", "accuracy", "prevalence")


def _group_name(report: EvalReport, class_id: int) -> str:
    if report.partition is None:
        return ""
    try:
        return report.partition.group_of(class_id)
    except KeyError:
        return ""


def _fmt_pct(frac: float | None, digits: int = 2) -> str:
    if frac is None:
        return "n/a"
    return f"{round_half_up(Fraction(frac) * 100, digits):.{digits}f}%"


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in report.per_class:
        acc = "" if p.accuracy is None else repr(p.accuracy)
        w.writerow([p.class_id, p.name, _group_name(report, p.class_id), acc, p.prevalence])
    return buf.getvalue()


def _exact_acc(report: EvalReport, class_id: int) -> Fraction:
    return Fraction(int(report.confusion[class_id, class_id]), int(report.prevalence[class_id]))


def report_markdown(report: EvalReport) -> str:
    lines = ["| OVERALL | TAIL (MICRO) | TAIL (MACRO) |", "|---|---:|---:|"]
    tail = report.group_acc.get("tail", {})
    overall = Fraction(int(np.trace(report.confusion)), report.num_samples) if report.num_samples else None
    lines.append(f"| {_fmt_pct(overall)} | {_fmt_pct(tail.get('micro'))} | {_fmt_pct(tail.get('macro'))} |")
    lines += ["", "| CLASS | ACCURACY (%) | PREVALENCE |", "|---|---:|---:|"]
    for p in report.per_class:
        if p.prevalence == 0:
            continue
        lines.append(f"| {p.name} | {_fmt_pct(_exact_acc(report, p.class_id))} | {p.prevalence} |")
    return "\n".join(lines) + "\n"


def report_latex_rows(report: EvalReport) -> str:
    rows = []
    for p in report.per_class:
        if p.prevalence == 0:
            continue
        pct = _fmt_pct(_exact_acc(report, p.class_id)).replace("%", r"\%")
        rows.append(f"{p.name} & {pct} & {p.prevalence} \\\\")
    return "\n".join(rows) + "\n"


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"


FORMATS = {"json": report_json, "csv": report_csv, "md": report_markdown, "markdown-table": report_markdown,
           "latex": report_latex_rows}


def emit_report(report: EvalReport, fmt: str, path=None) -> str:
    try:
        text = FORMATS[fmt](report)
    except KeyError:
        raise ValidationError(f"unknown report format {fmt!r}; choose from {sorted(FORMATS)}") from None
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def distribution_table(report: EvalReport, class_id: int) -> str:
    lines = ["| PREDICTED CLS | COUNT | PERCENT (%) |", "|---|---:|---:|"]
    for j, cnt, pct in report.prediction_distribution(class_id):
        lines.append(f"| {report.classes[j]} | {cnt} | {pct:.1f} |")
    return "\n".join(lines) + "\n"


# Baseline comparison


@dataclass
class ImprovementChart:
    rows: list[tuple[int, str, float, float, float]]  # id, name, baseline %, candidate %, delta pts
    overall_delta: float
    improved: int
    regressed: int
    unchanged: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "class", "baseline_pct", "candidate_pct", "delta_pts"])
        for row in self.rows:
            w.writerow([row[0], row[1], *(f"{v:.4f}" for v in row[2:])])
        return buf.getvalue()


def improvement_chart(baseline: EvalReport, candidate: EvalReport) -> ImprovementChart:
    """Per-class accuracy change of ``candidate`` over ``baseline`` in points."""
    if baseline.classes != candidate.classes:
        only_b = sorted(set(baseline.classes) - set(candidate.classes))
        only_c = sorted(set(candidate.classes) - set(baseline.classes))
        raise ValidationError(f"class sets differ (baseline only: {only_b}, candidate only: {only_c})")
    rows = []
    improved = regressed = unchanged = 0
    for i, name in enumerate(baseline.classes):
        a, b = baseline.class_accuracy(i), candidate.class_accuracy(i)
        if a is None or b is None:
            continue
        delta = 100.0 * (b - a)
        rows.append((i, name, 100.0 * a, 100.0 * b, delta))
        if abs(delta) < 1e-9:
            unchanged += 1
        elif delta > 0:
            improved += 1
        else:
            regressed += 1
    overall = 100.0 * (candidate.overall_top1 - baseline.overall_top1)
    return ImprovementChart(rows, overall, improved, regressed, unchanged)
