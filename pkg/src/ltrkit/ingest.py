"""Detector JSON + species metadata -> validated SampleRecord manifests.

Two detection layouts are read:

* MegaDetector batch output: ``{"images": [{"file", "detections": [{"category",
  "conf", "bbox"}]}], "detection_categories": {...}}``
* the flat layout ``{"entries": [{"image_ref", "detections": [...]}]}``

MegaDetector boxes are ``[x_min, y_min, width, height]`` relative to the
frame.  Absolute pixel boxes are accepted when the entry carries ``width``
and ``height``.  Species always comes from the metadata, never from the
detector category.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .data import FULL_FRAME, LabelMap, SampleRecord, ValidationError, parse_timestamp, validate_record

log = logging.getLogger(__name__)

DEFAULT_DROP = frozenset({"empty", "vehicle"})


class DetectionParseError(ValidationError):
    """Detection file is not valid JSON; carries the byte offset."""

    def __init__(self, path, byte_offset: int, msg: str):
        super().__init__(f"{path}: malformed JSON at byte {byte_offset}: {msg}")
        self.byte_offset = byte_offset


class SchemaError(ValidationError):
    pass


@dataclass(frozen=True)
class Detection:
    category: str
    bbox: tuple[float, float, float, float]
    conf: float


@dataclass(frozen=True)
class DetectionEntry:
    image_ref: str
    detections: tuple[Detection, ...] = ()


@dataclass
class DetectionFile:
    entries: list[DetectionEntry] = field(default_factory=list)
    categories: dict[str, str] = field(default_factory=dict)

    def by_image(self) -> dict[str, DetectionEntry]:
        return {e.image_ref: e for e in self.entries}


@dataclass(frozen=True)
class MetadataEntry:
    image_ref: str
    species_name: str
    site: str | None = None
    timestamp: object = None
    features: tuple[float, ...] | None = None


def _normalize_bbox(bbox, width, height, where: str) -> tuple[float, float, float, float]:
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise SchemaError(f"{where}: bbox must be a list of 4 numbers")
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: bbox must be numeric") from None
    if max(x, y, w, h) > 1.0:
        if not width or not height:
            raise SchemaError(f"{where}: absolute bbox needs image 'width' and 'height'")
        x, w = x / width, w / width
        y, h = y / height, h / height
    return (x, y, w, h)


def parse_detections_obj(obj, path="<detections>") -> DetectionFile:
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: top level must be an object")
    if "images" in obj:
        items, ref_key = obj["images"], "file"
    elif "entries" in obj:
        items, ref_key = obj["entries"], "image_ref"
    else:
        raise SchemaError(f"{path}: missing field 'images' (or 'entries')")
    cats = {str(k): str(v) for k, v in (obj.get("detection_categories") or {}).items()}
    seen = set()
    entries = []
    for i, item in enumerate(items):
        where = f"{path}: entry {i}"
        if not isinstance(item, dict):
            raise SchemaError(f"{where}: entry must be an object")
        ref = item.get(ref_key, item.get("image_ref"))
        if ref is None:
            raise SchemaError(f"{where}: missing field '{ref_key}'")
        if ref in seen:
            raise SchemaError(f"{where}: duplicate image {ref!r}")
        seen.add(ref)
        if "detections" not in item:
            # MegaDetector marks failed images with 'failure' and no detections.
            if "failure" in item:
                entries.append(DetectionEntry(str(ref)))
                continue
            raise SchemaError(f"{where}: missing field 'detections'")
        dets = []
        for j, d in enumerate(item["detections"] or []):
            dwhere = f"{where} detection {j}"
            for key in ("category", "bbox", "conf"):
                if key not in d:
                    raise SchemaError(f"{dwhere}: missing field '{key}'")
            conf = float(d["conf"])
            if not (0.0 <= conf <= 1.0):
                raise SchemaError(f"{dwhere}: conf {conf} outside [0, 1]")
            bbox = _normalize_bbox(d["bbox"], item.get("width"), item.get("height"), dwhere)
            cat = str(d["category"])
            dets.append(Detection(cats.get(cat, cat), bbox, conf))
        entries.append(DetectionEntry(str(ref), tuple(dets)))
    return DetectionFile(entries, cats)


def parse_detections(path) -> DetectionFile:
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise DetectionParseError(path, offset, e.msg) from None
    return parse_detections_obj(obj, path)


def parse_detection_shards(paths: Sequence, threads: int = 1) -> DetectionFile:
    """Parse several detection files (concurrently) and concatenate in the given order."""
    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(parse_detections, paths))
    else:
        parts = [parse_detections(p) for p in paths]
    merged = DetectionFile()
    seen = set()
    for path, part in zip(paths, parts):
        for e in part.entries:
            if e.image_ref in seen:
                raise SchemaError(f"{path}: image {e.image_ref!r} appears in more than one shard")
            seen.add(e.image_ref)
            merged.entries.append(e)
        merged.categories.update(part.categories)
    return merged


def _metadata_from_dict(d: dict, where: str) -> MetadataEntry:
    for key in ("image_ref", "species_name"):
        if not d.get(key):
            raise SchemaError(f"{where}: missing field '{key}'")
    feats = d.get("features")
    return MetadataEntry(
        image_ref=str(d["image_ref"]),
        species_name=str(d["species_name"]).strip(),
        site=d.get("site") or None,
        timestamp=d.get("timestamp"),
        features=None if feats is None else tuple(float(v) for v in feats),
    )


def read_metadata(path) -> list[MetadataEntry]:
    """JSON-lines or CSV metadata (``image_ref,species_name[,site,timestamp]``, header optional)."""
    path = Path(path)
    out = []
    if path.suffix.lower() == ".csv":
        cols = ["image_ref", "species_name", "site", "timestamp"]
        with open(path, newline="", encoding="utf-8") as f:
            for lineno, row in enumerate(csv.reader(f), start=1):
                if not row:
                    continue
                if lineno == 1 and row[0].strip() == "image_ref":
                    cols = [c.strip() for c in row]
                    continue
                out.append(_metadata_from_dict(dict(zip(cols, row)), f"{path}:{lineno}"))
        return out
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            out.append(_metadata_from_dict(d, f"{path}:{lineno}"))
    return out


@dataclass
class MergeResult:
    records: list[SampleRecord]
    excluded: dict[str, int]
    rejects: list[dict]

    @property
    def n_excluded(self) -> int:
        return sum(self.excluded.values())

    def reject_ratio(self) -> float:
        n = len(self.records) + self.n_excluded + len(self.rejects)
        return len(self.rejects) / n if n else 0.0

    def summary_lines(self) -> list[str]:
        lines = [f"records: {len(self.records)}"]
        for name, n in sorted(self.excluded.items()):
            lines.append(f"excluded {name}: {n}")
        lines.append(f"rejects: {len(self.rejects)}")
        return lines


def merge(
    detections: DetectionFile,
    metadata: Sequence[MetadataEntry],
    labels: LabelMap,
    drop_labels=DEFAULT_DROP,
    min_conf: float = 0.0,
) -> MergeResult:
    """One record per metadata entry (metadata order), carrying the single
    highest-confidence detection; ties keep the first detection listed."""
    index = labels.index
    drop = {d.lower() for d in drop_labels}
    by_image = detections.by_image()
    records, rejects = [], []
    excluded: dict[str, int] = {}
    for i, m in enumerate(metadata):
        if m.species_name.lower() in drop:
            excluded[m.species_name] = excluded.get(m.species_name, 0) + 1
            continue
        if m.species_name not in index:
            rejects.append({"index": i, "image_ref": m.image_ref, "species_name": m.species_name,
                            "reason": "species not in label map"})
            continue
        best = None
        entry = by_image.get(m.image_ref)
        if entry is not None:
            for d in entry.detections:
                if d.conf >= min_conf and (best is None or d.conf > best.conf):
                    best = d
        bbox, conf = (best.bbox, best.conf) if best is not None else (FULL_FRAME, 0.0)
        rec = SampleRecord(
            image_ref=m.image_ref,
            label=index[m.species_name],
            bbox=bbox,
            conf=conf,
            site=m.site,
            timestamp=parse_timestamp(m.timestamp),
            features=m.features,
        )
        problems = validate_record(rec, labels)
        if problems:
            rejects.append({"index": i, "image_ref": m.image_ref, "species_name": m.species_name,
                            "reason": "; ".join(problems)})
            continue
        records.append(rec)
    for name, n in sorted(excluded.items()):
        log.info("excluded %d %s frame(s)", n, name)
    return MergeResult(records, excluded, rejects)


def write_rejects(rejects: Sequence[dict], path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rejects), encoding="utf-8")
