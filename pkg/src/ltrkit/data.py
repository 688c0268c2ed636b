"""Canonical data model: label maps, sample records, class statistics.

Records are immutable value objects.  Manifests are JSON-lines files with
one :class:`SampleRecord` per line; a header-less CSV export with the columns
``image_ref,label,x,y,w,h,conf,site,timestamp`` is accepted on input.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

FULL_FRAME = (0.0, 0.0, 1.0, 1.0)

CSV_COLUMNS = ("image_ref", "label", "x", "y", "w", "h", "conf", "site", "timestamp")


class ValidationError(ValueError):
    """Bad input data or configuration.  Maps to CLI exit code 1."""


@dataclass(frozen=True)
class LabelMap:
    classes: tuple[str, ...]

    def __post_init__(self):
        classes = tuple(self.classes)
        object.__setattr__(self, "classes", classes)
        for i, name in enumerate(classes):
            if not isinstance(name, str) or not name:
                raise ValidationError(f"class {i}: name must be a non-empty string")
        if len(set(classes)) != len(classes):
            dupes = sorted({c for c in classes if classes.count(c) > 1})
            raise ValidationError(f"duplicate class names: {dupes}")

    @property
    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.classes)}

    def __len__(self) -> int:
        return len(self.classes)

    def id_of(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise KeyError(name) from None

    def name_of(self, idx: int) -> str:
        return self.classes[idx]

    def to_dict(self) -> dict:
        return {"classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d) -> "LabelMap":
        if isinstance(d, list):
            return cls(tuple(d))
        if "classes" not in d:
            raise ValidationError("label file: missing field 'classes'")
        return cls(tuple(d["classes"]))

    @classmethod
    def load(cls, path) -> "LabelMap":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def parse_timestamp(value) -> datetime | None:
    """Lenient timestamp parsing; anything unrecognised becomes ``None``.

    Accepts ISO-8601 (with or without ``Z``), EXIF ``YYYY:MM:DD HH:MM:SS``
    and POSIX seconds.  Naive datetimes are taken as UTC.
    """
    if value is None or value == "":
        return None
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        if not math.isfinite(value):
            return None
        try:
            return datetime.fromtimestamp(value, tz=timezone.utc)
        except (OverflowError, OSError, ValueError):
            return None
    elif isinstance(value, str):
        s = value.strip()
        if s.endswith("Z"):
            s = s[:-1] + "+00:00"
        dt = None
        try:
            dt = datetime.fromisoformat(s)
        except ValueError:
            for fmt in ("%Y:%m:%d %H:%M:%S", "%Y/%m/%d %H:%M:%S", "%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M"):
                try:
                    dt = datetime.strptime(s, fmt)
                    break
                except ValueError:
                    continue
        if dt is None:
            return None
    else:
        return None
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime | None) -> str | None:
    if dt is None:
        return None
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class SampleRecord:
    """One labeled sample: ``(image, {bbox, label, conf})`` plus provenance.

    ``bbox`` is ``(x, y, w, h)`` in frame-relative coordinates or ``None`` when
    no detection is attached.  ``features`` optionally carries a precomputed
    feature vector for the vectors featurization mode.
    """

    image_ref: str
    label: int
    bbox: tuple[float, float, float, float] | None = FULL_FRAME
    conf: float = 0.0
    site: str | None = None
    timestamp: datetime | None = None
    features: tuple[float, ...] | None = field(default=None, compare=True)

    def to_dict(self) -> dict:
        d = {
            "image_ref": self.image_ref,
            "label": self.label,
            "bbox": None if self.bbox is None else [float(v) for v in self.bbox],
            "conf": float(self.conf),
            "site": self.site,
            "timestamp": format_timestamp(self.timestamp),
        }
        if self.features is not None:
            d["features"] = [float(v) for v in self.features]
        return d

    @classmethod
    def from_dict(cls, d: dict, where: str = "record") -> "SampleRecord":
        for key in ("image_ref", "label"):
            if key not in d:
                raise ValidationError(f"{where}: missing field '{key}'")
        label = d["label"]
        if isinstance(label, bool) or not isinstance(label, (int, float)) or int(label) != label:
            raise ValidationError(f"{where}: label must be an integer class id, got {label!r}")
        bbox = d.get("bbox", FULL_FRAME)
        if bbox is not None:
            if len(bbox) != 4:
                raise ValidationError(f"{where}: bbox must have 4 values")
            bbox = tuple(float(v) for v in bbox)
        feats = d.get("features")
        return cls(
            image_ref=str(d["image_ref"]),
            label=int(label),
            bbox=bbox,
            conf=float(d.get("conf", 0.0)),
            site=d.get("site") or None,
            timestamp=parse_timestamp(d.get("timestamp")),
            features=None if feats is None else tuple(float(v) for v in feats),
        )


def validate_record(record: SampleRecord, labels: LabelMap) -> list[str]:
    """Every invariant violation of ``record``; an empty list means ok."""
    problems = []
    if not (0 <= record.label < len(labels)):
        problems.append(f"label {record.label} out of range [0, {len(labels)})")
    if not (0.0 <= record.conf <= 1.0) or math.isnan(record.conf):
        problems.append(f"conf out of range: {record.conf}")
    if record.bbox is not None:
        x, y, w, h = record.bbox
        if any(math.isnan(v) for v in record.bbox):
            problems.append("bbox contains NaN")
        else:
            if w <= 0 or h <= 0:
                problems.append(f"bbox has non-positive size: w={w}, h={h}")
            if x < 0 or y < 0:
                problems.append(f"bbox origin outside frame: x={x}, y={y}")
            if x + w > 1 + 1e-9 or y + h > 1 + 1e-9:
                problems.append(f"bbox exceeds frame: x+w={x + w:g}, y+h={y + h:g}")
    return problems


@dataclass(frozen=True)
class ClassStats:
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValidationError("class counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "total": self.total}

    @classmethod
    def from_dict(cls, d) -> "ClassStats":
        if isinstance(d, list):
            return cls(tuple(d))
        stats = cls(tuple(d["counts"]))
        if "total" in d and d["total"] != stats.total:
            raise ValidationError(f"stats total {d['total']} != sum of counts {stats.total}")
        return stats


def class_stats(records: Iterable[SampleRecord], labels: LabelMap) -> ClassStats:
    counts = [0] * len(labels)
    for i, rec in enumerate(records):
        if not (0 <= rec.label < len(labels)):
            raise ValidationError(
                f"record {i} ({rec.image_ref}): unknown label id {rec.label} for {len(labels)} classes"
            )
        counts[rec.label] += 1
    return ClassStats(tuple(counts))


@dataclass(frozen=True)
class LongTailPartition:
    head: frozenset[int]
    tail: frozenset[int]
    few_shot: frozenset[int]
    head_share: float = 0.5
    few_shot_threshold: int = 20

    def group_of(self, class_id: int) -> str:
        if class_id in self.head:
            return "head"
        if class_id in self.tail:
            return "tail"
        if class_id in self.few_shot:
            return "few_shot"
        raise KeyError(class_id)

    def groups(self) -> dict[str, frozenset[int]]:
        return {"head": self.head, "tail": self.tail, "few_shot": self.few_shot}

    def to_dict(self, labels: LabelMap | None = None) -> dict:
        d = {
            "head": sorted(self.head),
            "tail": sorted(self.tail),
            "few_shot": sorted(self.few_shot),
            "head_share": self.head_share,
            "few_shot_threshold": self.few_shot_threshold,
        }
        if labels is not None:
            d["classes"] = list(labels.classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LongTailPartition":
        try:
            return cls(
                head=frozenset(d["head"]),
                tail=frozenset(d["tail"]),
                few_shot=frozenset(d["few_shot"]),
                head_share=float(d.get("head_share", 0.5)),
                few_shot_threshold=int(d.get("few_shot_threshold", 20)),
            )
        except KeyError as e:
            raise ValidationError(f"partition file: missing field {e.args[0]!r}") from None


@dataclass(frozen=True)
class PreprocessSpec:
    target_size: tuple[int, int] = (256, 256)
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        object.__setattr__(self, "target_size", tuple(int(v) for v in self.target_size))
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if len(self.target_size) != 2 or min(self.target_size) <= 0:
            raise ValidationError(f"target_size must be two positive ints, got {self.target_size}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValidationError("mean and std must be 3-vectors")
        if any(s <= 0 for s in self.std):
            raise ValidationError(f"std components must be > 0, got {self.std}")

    def to_dict(self) -> dict:
        return {"target_size": list(self.target_size), "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessSpec":
        return cls(**{k: tuple(v) for k, v in d.items()})


# Manifest I/O


def _read_csv_manifest(path) -> list[SampleRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if lineno == 1 and row[0] == "image_ref":
                continue
            if len(row) < 7:
                raise ValidationError(f"{path}:{lineno}: expected at least 7 columns {CSV_COLUMNS}")
            row = row + [""] * (len(CSV_COLUMNS) - len(row))
            ref, label, x, y, w, h, conf, site, ts = row[: len(CSV_COLUMNS)]
            try:
                bbox = None if x == "" else (float(x), float(y), float(w), float(h))
                records.append(
                    SampleRecord(
                        image_ref=ref,
                        label=int(label),
                        bbox=bbox,
                        conf=float(conf) if conf else 0.0,
                        site=site or None,
                        timestamp=parse_timestamp(ts),
                    )
                )
            except ValueError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from None
    return records


def read_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_csv_manifest(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            records.append(SampleRecord.from_dict(d, where=f"{path}:{lineno}"))
    return records


def manifest_lines(records: Sequence[SampleRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def write_manifest(records: Sequence[SampleRecord], path) -> None:
    Path(path).write_text(manifest_lines(records), encoding="utf-8")


def write_csv_manifest(records: Sequence[SampleRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        for r in records:
            bbox = r.bbox if r.bbox is not None else ("", "", "", "")
            w.writerow([r.image_ref, r.label, *bbox, r.conf, r.site or "", format_timestamp(r.timestamp) or ""])
