"""Shared fixtures: small synthetic long-tailed manifests with feature vectors."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from ltrkit.data import LabelMap, SampleRecord, write_manifest
from ltrkit.numerics import seeded_rng

CLASSES = ("deer", "cow", "fox", "bear", "lynx", "otter")
COUNTS = (120, 80, 40, 24, 12, 6)
T0 = datetime(2020, 6, 1, tzinfo=timezone.utc)


def synthetic_records(counts=COUNTS, dim=4, seed=0, spread=3.0):
    """Records with Gaussian class-mean features, sites and hourly timestamps."""
    rng = seeded_rng(seed, stream=3)
    means = rng.normal(len(counts) * dim).reshape(len(counts), dim) * spread
    out = []
    k = 0
    for c, n in enumerate(counts):
        noise = rng.normal(n * dim).reshape(n, dim)
        for i in range(n):
            out.append(SampleRecord(
                image_ref=f"img/{c:02d}_{i:04d}.jpg",
                label=c,
                conf=0.9,
                site=f"site{k % 3}",
                timestamp=T0 + timedelta(hours=k),
                features=tuple(float(v) for v in means[c] + noise[i]),
            ))
            k += 1
    return out


@pytest.fixture
def labels():
    return LabelMap(CLASSES)


@pytest.fixture
def records():
    return synthetic_records()


@pytest.fixture
def manifest_dir(tmp_path, labels, records):
    """tmp dir holding ``labels.json`` and ``all.jsonl``."""
    labels.save(tmp_path / "labels.json")
    write_manifest(records, tmp_path / "all.jsonl")
    return tmp_path
