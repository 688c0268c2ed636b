"""Finite-difference verification of every analytic loss gradient."""

from __future__ import annotations

import numpy as np

from .data import ClassStats
from .losses import LossSpec, class_weights, compute_loss, ldam_margins
from .numerics import finite_diff_grad, max_relative_error, seeded_rng

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_STEP = 1e-3

# (label, spec); labels name the loss and its hyperparameters
GRADCHECK_SUITE = (
    ("ce", LossSpec("ce")),
    ("wce[inverse_freq]", LossSpec("wce", weight_scheme="inverse_freq")),
    ("wce[effective_number beta=0.9999]", LossSpec("wce", weight_scheme="effective_number", beta=0.9999)),
    ("focal[gamma=0.5]", LossSpec("focal", gamma=0.5)),
    ("focal[gamma=2]", LossSpec("focal", gamma=2.0)),
    ("ldam[c_max=0.5 s=1]", LossSpec("ldam", c_max=0.5, scale=1.0)),
    ("ldam[c_max=0.5 s=30]", LossSpec("ldam", c_max=0.5, scale=30.0)),
)


def random_instance(rng, batch: int, num_classes: int):
    """Logits, targets and long-tailed class counts for one check."""
    z = rng.normal(batch * num_classes).reshape(batch, num_classes)
    y = (rng.raw(batch) % np.uint64(num_classes)).astype(np.int64)
    # counts in [1, 5000], log-uniform, so weights and margins vary widely
    counts = np.floor(np.exp(rng.uniform(num_classes) * np.log(5000.0))).astype(np.int64)
    return z, y, ClassStats(tuple(int(c) for c in counts))


def check_instance(spec: LossSpec, z, y, stats: ClassStats, h: float = GRADCHECK_STEP) -> float:
    class_w = None
    if spec.kind == "wce":
        class_w = class_weights(stats, spec.weight_scheme, spec.beta, spec.normalize_weights)
    margins = ldam_margins(stats, spec.c_max) if spec.kind == "ldam" else None
    _, grad = compute_loss(spec, z, y, class_w, margins)
    numeric = finite_diff_grad(lambda v: compute_loss(spec, v, y, class_w, margins)[0], z, h)
    return max_relative_error(grad, numeric)


def run_gradcheck(seed: int = 7, instances: int = 100, batch: int = 8, num_classes: int = 12,
                  suite=GRADCHECK_SUITE) -> dict[str, float]:
    """Worst relative error per loss over ``instances`` random cases."""
    worst = {}
    for i, (label, spec) in enumerate(suite):
        rng = seeded_rng(seed, stream=100 + i)
        err = 0.0
        for _ in range(instances):
            z, y, stats = random_instance(rng, batch, num_classes)
            err = max(err, check_instance(spec, z, y, stats))
        worst[label] = err
    return worst
