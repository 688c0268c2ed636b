"""Long-tail losses on logits with analytic gradients.

Every loss returns ``(mean_loss, dL/dlogits)``.  The batch reduction is the
plain mean of per-sample (weighted) losses, i.e. division by the batch size
and not by the sum of weights.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import ClassStats, ValidationError
from .numerics import as_matrix, log_softmax

LOSS_KINDS = ("ce", "wce", "focal", "ldam")
WEIGHT_SCHEMES = ("uniform", "inverse_freq", "effective_number")


@dataclass(frozen=True)
class LossSpec:
    """Loss selection plus the hyperparameters relevant to it.

    ``weight_scheme`` applies to ``wce``; ``gamma`` to ``focal``; ``c_max``
    and ``scale`` to ``ldam``.  ``drw_defer_epoch`` enables deferred
    re-weighting for any kind (``None`` disables it).
    """

    kind: str = "ce"
    gamma: float = 2.0
    weight_scheme: str = "inverse_freq"
    beta: float = 0.9999
    normalize_weights: bool = True
    c_max: float = 0.5
    scale: float = 30.0
    drw_defer_epoch: int | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValidationError(f"loss.weight_scheme must be one of {WEIGHT_SCHEMES}, got {self.weight_scheme!r}")
        if self.gamma < 0:
            raise ValidationError(f"loss.gamma must be >= 0, got {self.gamma}")
        if not (0 <= self.beta < 1):
            raise ValidationError(f"loss.beta must be in [0, 1), got {self.beta}")
        if self.c_max <= 0:
            raise ValidationError(f"loss.c_max must be > 0, got {self.c_max}")
        if self.scale <= 0:
            raise ValidationError(f"loss.scale must be > 0, got {self.scale}")
        if self.drw_defer_epoch is not None and self.drw_defer_epoch < 0:
            raise ValidationError(f"loss.drw_defer_epoch must be >= 0, got {self.drw_defer_epoch}")

    def to_dict(self) -> dict:
        """Only the hyperparameters that matter for ``kind``."""
        d = {"kind": self.kind}
        if self.kind == "focal":
            d["gamma"] = self.gamma
        if self.kind == "wce":
            d["weight_scheme"] = self.weight_scheme
            d["normalize_weights"] = self.normalize_weights
        if (self.kind == "wce" and self.weight_scheme == "effective_number") or self.drw_defer_epoch is not None:
            d["beta"] = self.beta
        if self.kind == "ldam":
            d["c_max"] = self.c_max
            d["scale"] = self.scale
        d["drw_defer_epoch"] = self.drw_defer_epoch
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        known = set(asdict(cls()).keys())
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"loss: unknown field(s) {sorted(unknown)}")
        return cls(**d)


def class_weights(
    stats: ClassStats,
    scheme: str = "inverse_freq",
    beta: float = 0.9999,
    normalize: bool = True,
    mask=(),
) -> np.ndarray:
    """Per-class weights; masked class ids get weight 0.

    With ``normalize`` the unmasked weights are rescaled to mean 1.
    """
    n = stats.as_array().astype(np.float64)
    masked = np.zeros(n.shape, dtype=bool)
    masked[list(mask)] = True
    live = ~masked
    if np.any(n[live] < 1) and scheme != "uniform":
        bad = [int(c) for c in np.flatnonzero(live & (n < 1))]
        raise ValidationError(f"class weight undefined for empty class(es) {bad}; mask them explicitly")
    w = np.zeros_like(n)
    if scheme == "uniform":
        w[live] = 1.0
    elif scheme == "inverse_freq":
        w[live] = 1.0 / n[live]
    elif scheme == "effective_number":
        if not (0 <= beta < 1):
            raise ValidationError(f"beta must be in [0, 1), got {beta}")
        # (1 - beta) / (1 - beta^n), with -expm1(n log beta) for accuracy near beta -> 1
        if beta == 0:
            w[live] = 1.0
        else:
            w[live] = (1.0 - beta) / -np.expm1(n[live] * np.log(beta))
    else:
        raise ValidationError(f"unknown weight scheme {scheme!r}")
    if normalize and live.any():
        w[live] = w[live] / w[live].mean()
    return w


def ldam_margins(stats: ClassStats, c_max: float = 0.5) -> np.ndarray:
    n = stats.as_array().astype(np.float64)
    if np.any(n < 1):
        bad = [int(c) for c in np.flatnonzero(n < 1)]
        raise ValidationError(f"LDAM margin undefined for empty class(es) {bad}")
    m = n**-0.25
    return c_max * m / m.max()


def drw_weights(epoch: int, spec: LossSpec, stats: ClassStats) -> np.ndarray:
    """Uniform weights before the defer epoch, effective-number weights from it on."""
    uniform = np.ones(stats.num_classes)
    if spec.drw_defer_epoch is None or epoch < spec.drw_defer_epoch:
        return uniform
    return class_weights(stats, "effective_number", beta=spec.beta, normalize=spec.normalize_weights)


def _targets(targets, batch: int, num_classes: int) -> np.ndarray:
    y = np.asarray(targets)
    if y.shape != (batch,):
        raise ValueError(f"targets: expected shape ({batch},), got {y.shape}")
    if y.dtype.kind not in "iu":
        if not np.all(y == np.round(y)):
            raise ValueError("targets must be integer class ids")
        y = y.astype(np.int64)
    if y.size and not (0 <= y.min() and y.max() < num_classes):
        raise ValueError(f"targets out of range [0, {num_classes})")
    return y


def _sample_weights(sample_weights, batch: int) -> np.ndarray:
    if sample_weights is None:
        return np.ones(batch)
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (batch,):
        raise ValueError(f"sample_weights: expected shape ({batch},), got {w.shape}")
    return w


def ce_loss(logits, targets, sample_weights=None):
    z = as_matrix(logits, "logits")
    b, c = z.shape
    y = _targets(targets, b, c)
    w = _sample_weights(sample_weights, b)
    logp = log_softmax(z)
    rows = np.arange(b)
    loss = float(np.sum(-w * logp[rows, y]) / b)
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad *= (w / b)[:, None]
    return loss, grad


def focal_loss(logits, targets, gamma: float = 2.0, alpha_weights=None):
    """``-alpha_y (1 - p_y)^gamma log p_y`` averaged over the batch.

    ``alpha_weights`` is per-sample, like ``sample_weights`` elsewhere.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    z = as_matrix(logits, "logits")
    b, c = z.shape
    y = _targets(targets, b, c)
    a = _sample_weights(alpha_weights, b)
    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(b)
    logpt = logp[rows, y]
    pt = p[rows, y]
    one_minus = -np.expm1(logpt)
    mod = one_minus**gamma
    loss = float(np.sum(-a * mod * logpt) / b)

    # dL/dz_j = a * [gamma (1-pt)^(gamma-1) pt log pt - (1-pt)^gamma] * (delta_jy - p_j)
    deriv_term = np.zeros(b)
    pos = one_minus > 0
    if gamma != 0:
        deriv_term[pos] = gamma * mod[pos] * pt[pos] * logpt[pos] / one_minus[pos]
    coef = a * (deriv_term - mod) / b
    delta_minus_p = -p
    delta_minus_p[rows, y] += 1.0
    grad = coef[:, None] * delta_minus_p
    return loss, grad


def ldam_loss(logits, targets, margins, s: float = 30.0, sample_weights=None):
    """Cross-entropy on ``s * (z - margin_y * onehot_y)``."""
    if s <= 0:
        raise ValueError(f"s must be > 0, got {s}")
    z = as_matrix(logits, "logits")
    b, c = z.shape
    y = _targets(targets, b, c)
    m = np.asarray(margins, dtype=np.float64)
    if m.shape != (c,):
        raise ValueError(f"margins: expected shape ({c},), got {m.shape}")
    rows = np.arange(b)
    shifted = z.copy()
    shifted[rows, y] -= m[y]
    loss, g = ce_loss(s * shifted, y, sample_weights)
    return loss, s * g


def compute_loss(spec: LossSpec, logits, targets, class_w=None, margins=None):
    """Dispatch on ``spec.kind``.  ``class_w`` is per-class (or ``None``)."""
    y = np.asarray(targets)
    sw = None if class_w is None else np.asarray(class_w)[y]
    if spec.kind in ("ce", "wce"):
        return ce_loss(logits, y, sw)
    if spec.kind == "focal":
        return focal_loss(logits, y, spec.gamma, sw)
    if margins is None:
        raise ValueError("ldam loss requires margins")
    return ldam_loss(logits, y, margins, spec.scale, sw)


class LossSchedule:
    """Per-epoch class weights and margins derived from training counts."""

    def __init__(self, spec: LossSpec, stats: ClassStats):
        self.spec = spec
        self.stats = stats
        self.margins = ldam_margins(stats, spec.c_max) if spec.kind == "ldam" else None
        if spec.kind == "wce":
            self._static = class_weights(stats, spec.weight_scheme, spec.beta, spec.normalize_weights)
        else:
            self._static = None

    def weights(self, epoch: int):
        if self.spec.drw_defer_epoch is not None:
            w = drw_weights(epoch, self.spec, self.stats)
            return w if self._static is None else w * self._static
        return self._static

    def __call__(self, logits, targets, epoch: int = 0):
        return compute_loss(self.spec, logits, targets, self.weights(epoch), self.margins)
