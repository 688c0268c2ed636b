"""Class capping, stratified splits, Head/Tail/Few-shot partitions and the
reduced-bias cross-domain test set.

All functions are pure; randomness comes only from :func:`seeded_rng`.
Index-level variants (``*_indices``) work on plain label arrays so very
large class counts can be handled without materialising records.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .data import ClassStats, LabelMap, LongTailPartition, SampleRecord, ValidationError
from .numerics import seeded_rng

log = logging.getLogger(__name__)

DEFAULT_CAP = 100_000


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if len(fr) != 3:
            raise ValidationError(f"split fractions must have 3 entries, got {fr}")
        if any(not (0 < f < 1) for f in fr):
            raise ValidationError(f"each split fraction must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValidationError(f"split fractions must sum to 1, got {sum(fr)!r}")
        if not (0 <= self.seed < 2**64):
            raise ValidationError("split seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {"fractions": list(self.fractions), "seed": self.seed}


@dataclass(frozen=True)
class ReducedBiasSpec:
    shared_classes: frozenset[str]
    overlap_keys: tuple[str, ...] = ("site", "timestamp")
    dt_seconds: float = 3600.0

    def __post_init__(self):
        object.__setattr__(self, "shared_classes", frozenset(self.shared_classes))
        object.__setattr__(self, "overlap_keys", tuple(self.overlap_keys))
        if not self.shared_classes:
            raise ValidationError("reduced-bias spec needs at least one shared class")
        if self.dt_seconds < 0:
            raise ValidationError(f"overlap window must be >= 0, got {self.dt_seconds}")
        bad = set(self.overlap_keys) - {"site", "timestamp"}
        if bad or not self.overlap_keys:
            raise ValidationError(f"overlap_keys must be a non-empty subset of (site, timestamp), got {self.overlap_keys}")


def _labels_array(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.fromiter((r.label for r in records), dtype=np.int64, count=len(records))


def cap_indices(labels: np.ndarray, cap: int = DEFAULT_CAP, seed: int = 0) -> np.ndarray:
    """Sorted indices kept after capping every class at ``cap`` samples."""
    if cap < 1:
        raise ValidationError(f"cap must be >= 1, got {cap}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = seeded_rng(seed)
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size > cap:
            idx = np.sort(idx[rng.permutation(idx.size)[:cap]])
        keep.append(idx)
    if not keep:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(keep))


def cap_classes(records: Sequence[SampleRecord], cap: int = DEFAULT_CAP, seed: int = 0) -> list[SampleRecord]:
    keep = cap_indices(_labels_array(records), cap, seed)
    return [records[i] for i in keep]


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """``floor(f*n)`` per split, remainders handed out train -> val -> test."""
    fr = [Fraction(repr(float(f))) for f in fractions]
    counts = [int(f * n) for f in fr]
    rem = n - sum(counts)
    i = 0
    while rem > 0:
        counts[i % 3] += 1
        rem -= 1
        i += 1
    return tuple(counts)


def split_indices(labels: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    rng = seeded_rng(spec.seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_tr, n_va, _ = split_counts(idx.size, spec.fractions)
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr : n_tr + n_va])
        parts[2].append(idx[n_tr + n_va :])
    return tuple(
        np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts
    )


def stratified_split(records: Sequence[SampleRecord], spec: SplitSpec):
    """Per-class seeded split into ``(train, val, test)``; manifest order kept."""
    tr, va, te = split_indices(_labels_array(records), spec)
    return ([records[i] for i in tr], [records[i] for i in va], [records[i] for i in te])


SPLIT_NAMES = ("train", "val", "test")


def apply_split_assignments(records: Sequence[SampleRecord], assignments: dict[str, str]):
    """Reproduce an externally published split from ``image_ref -> split name``."""
    parts = {name: [] for name in SPLIT_NAMES}
    missing = []
    for r in records:
        name = assignments.get(r.image_ref)
        if name is None:
            missing.append(r.image_ref)
            continue
        if name not in parts:
            raise ValidationError(f"split assignment for {r.image_ref}: unknown split {name!r}")
        parts[name].append(r)
    if missing:
        raise ValidationError(f"{len(missing)} record(s) have no split assignment, first: {missing[0]}")
    return parts["train"], parts["val"], parts["test"]


def partition_long_tail(
    stats: ClassStats, head_share: float = 0.5, few_shot_threshold: int = 20
) -> LongTailPartition:
    """Few-shot = classes under the threshold; head = shortest descending
    prefix of the rest whose share of *all* samples exceeds ``head_share``.

    If the non-few-shot classes never exceed the share together, all of
    them are head and the tail is empty.
    """
    total = stats.total
    if total <= 0:
        raise ValidationError("cannot partition classes with zero total samples")
    counts = stats.counts
    few = frozenset(c for c, n in enumerate(counts) if n < few_shot_threshold)
    rest = sorted((c for c in range(len(counts)) if c not in few), key=lambda c: (-counts[c], c))
    head = []
    cum = 0
    for c in rest:
        head.append(c)
        cum += counts[c]
        if cum > head_share * total:
            break
    head_set = frozenset(head)
    tail = frozenset(rest) - head_set
    return LongTailPartition(head_set, tail, few, head_share, few_shot_threshold)


@dataclass
class ReducedBiasResult:
    records: list[SampleRecord]
    prevalence: dict[str, int]
    missing_classes: list[str] = field(default_factory=list)
    removed_overlap: int = 0
    removed_unshared: int = 0


def build_reduced_bias(
    source: Sequence[SampleRecord],
    source_labels: LabelMap,
    external: Sequence[SampleRecord],
    external_labels: LabelMap,
    spec: ReducedBiasSpec,
) -> ReducedBiasResult:
    """Filter an external manifest to shared classes and drop records that
    overlap the source in space and time, relabeling into ``source_labels``.

    A record overlaps when every configured key matches a source record:
    same ``site`` and/or timestamps within ``dt_seconds``.  Records lacking
    a key's field never match on that key.
    """
    src_index = source_labels.index
    unknown = sorted(spec.shared_classes - set(src_index))
    if unknown:
        raise ValidationError(f"shared classes absent from source label map: {unknown}")
    use_site = "site" in spec.overlap_keys
    use_time = "timestamp" in spec.overlap_keys

    by_site: dict[str | None, list[float]] = {}
    sites = set()
    all_times = []
    for r in source:
        if r.site is not None:
            sites.add(r.site)
        if r.timestamp is not None:
            t = r.timestamp.timestamp()
            all_times.append(t)
            if r.site is not None:
                by_site.setdefault(r.site, []).append(t)
    for v in by_site.values():
        v.sort()
    all_times.sort()

    def near(times: list[float], t: float) -> bool:
        i = bisect.bisect_left(times, t - spec.dt_seconds)
        return i < len(times) and times[i] <= t + spec.dt_seconds

    def overlaps(r: SampleRecord) -> bool:
        if use_site and use_time:
            if r.site is None or r.timestamp is None:
                return False
            return near(by_site.get(r.site, []), r.timestamp.timestamp())
        if use_site:
            return r.site is not None and r.site in sites
        return r.timestamp is not None and near(all_times, r.timestamp.timestamp())

    out = []
    prevalence = {name: 0 for name in sorted(spec.shared_classes, key=src_index.get)}
    removed_overlap = removed_unshared = 0
    for r in external:
        name = external_labels.name_of(r.label)
        if name not in spec.shared_classes:
            removed_unshared += 1
            continue
        if overlaps(r):
            removed_overlap += 1
            continue
        out.append(
            SampleRecord(r.image_ref, src_index[name], r.bbox, r.conf, r.site, r.timestamp, r.features)
        )
        prevalence[name] += 1
    missing = [name for name, n in prevalence.items() if n == 0]
    for name in missing:
        log.warning("shared class %r has no records in the external manifest", name)
    return ReducedBiasResult(out, prevalence, missing, removed_overlap, removed_unshared)
