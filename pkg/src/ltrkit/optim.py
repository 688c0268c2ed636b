"""Adam / AdamW, ReduceLROnPlateau, early stopping and best-checkpoint choice.

Parameters, gradients and moment buffers are dicts of numpy arrays keyed by
parameter name.  Scheduler and early-stop state are small immutable records
so a metric stream can be replayed to the same trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .data import ValidationError


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adamw"
    lr: float = 1e-4
    weight_decay: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ValidationError(f"optim.kind must be 'adam' or 'adamw', got {self.kind!r}")
        if self.weight_decay is None:
            object.__setattr__(self, "weight_decay", 1e-2 if self.kind == "adamw" else 0.0)
        if not self.lr > 0:
            raise ValidationError(f"optim.lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValidationError(f"optim.weight_decay must be >= 0, got {self.weight_decay}")
        for name in ("beta1", "beta2"):
            if not (0 <= getattr(self, name) < 1):
                raise ValidationError(f"optim.{name} must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def _check_shapes(params: dict, grads: dict) -> None:
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise ValueError(f"shape mismatch for {k!r}: {np.shape(params[k])} vs {np.shape(grads[k])}")


def _adam_update(params, grads, state: AdamState, cfg: OptimConfig, lr: float, decoupled: bool):
    _check_shapes(params, grads)
    for k in params:
        if k in state.m and state.m[k].shape != np.shape(params[k]):
            raise ValueError(f"optimizer state shape mismatch for {k!r}")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        if decoupled:
            theta = theta - lr * cfg.weight_decay * theta
        elif cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m = b1 * state.m.get(k, np.zeros_like(theta)) + (1.0 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(theta)) + (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[k] = theta - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: OptimConfig, lr: float | None = None):
    """One Adam step; a non-zero ``weight_decay`` is added to the gradient (L2)."""
    return _adam_update(params, grads, state, cfg, cfg.lr if lr is None else lr, decoupled=False)


def adamw_step(params: dict, grads: dict, state: AdamState, cfg: OptimConfig, lr: float | None = None):
    """One AdamW step: ``theta <- theta - lr*wd*theta`` then the Adam update."""
    return _adam_update(params, grads, state, cfg, cfg.lr if lr is None else lr, decoupled=True)


def optimizer_step(params, grads, state, cfg: OptimConfig, lr=None):
    step = adamw_step if cfg.kind == "adamw" else adam_step
    return step(params, grads, state, cfg, lr)


def _improved(metric: float, best: float, mode: str, threshold: float) -> bool:
    if mode == "max":
        return metric > best + threshold
    return metric < best - threshold


def _initial_best(mode: str) -> float:
    return -math.inf if mode == "max" else math.inf


@dataclass(frozen=True)
class PlateauConfig:
    factor: float = 0.1
    patience: int = 5
    mode: str = "max"
    monitor: str = "val_macro_recall"
    min_lr: float = 1e-7
    threshold: float = 1e-4
    eps: float = 1e-8  # smaller lr changes are ignored

    def __post_init__(self):
        if not (0 < self.factor < 1):
            raise ValidationError(f"scheduler.factor must be in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ValidationError(f"scheduler.patience must be >= 1, got {self.patience}")
        if self.mode not in ("max", "min"):
            raise ValidationError(f"scheduler.mode must be 'max' or 'min', got {self.mode!r}")
        if self.min_lr < 0:
            raise ValidationError(f"scheduler.min_lr must be >= 0, got {self.min_lr}")
        if self.threshold < 0:
            raise ValidationError(f"scheduler.threshold must be >= 0, got {self.threshold}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlateauConfig":
        return cls(**d)


@dataclass(frozen=True)
class PlateauState:
    lr: float
    best: float
    num_bad: int = 0
    reductions: int = 0


def plateau_init(lr: float, cfg: PlateauConfig) -> PlateauState:
    return PlateauState(lr=lr, best=_initial_best(cfg.mode))


def plateau_observe(state: PlateauState, metric: float, cfg: PlateauConfig) -> tuple[float, PlateauState]:
    """Feed one epoch's metric.

    The learning rate drops once the number of consecutive non-improving
    epochs exceeds ``patience`` (the epoch after ``patience`` stagnant ones),
    after which the counter restarts.
    """
    if metric is None or math.isnan(metric):
        raise ValueError(f"scheduler received a NaN metric ({cfg.monitor})")
    if _improved(metric, state.best, cfg.mode, cfg.threshold):
        state = replace(state, best=metric, num_bad=0)
    else:
        state = replace(state, num_bad=state.num_bad + 1)
    if state.num_bad > cfg.patience:
        new_lr = max(state.lr * cfg.factor, cfg.min_lr)
        if state.lr - new_lr > cfg.eps * state.lr:
            state = replace(state, lr=new_lr, reductions=state.reductions + 1)
        state = replace(state, num_bad=0)
    return state.lr, state


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 10
    mode: str = "max"
    monitor: str = "val_macro_recall"
    threshold: float = 1e-4

    def __post_init__(self):
        if self.patience < 1:
            raise ValidationError(f"early_stop.patience must be >= 1, got {self.patience}")
        if self.mode not in ("max", "min"):
            raise ValidationError(f"early_stop.mode must be 'max' or 'min', got {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EarlyStopConfig":
        return cls(**d)


@dataclass(frozen=True)
class EarlyStopState:
    best: float
    num_bad: int = 0
    stopped: bool = False


def early_stop_init(cfg: EarlyStopConfig) -> EarlyStopState:
    return EarlyStopState(best=_initial_best(cfg.mode))


def early_stop_observe(state: EarlyStopState, metric: float, cfg: EarlyStopConfig) -> tuple[bool, EarlyStopState]:
    """Returns ``(stop, new_state)``; stop on the ``patience``-th stagnant epoch."""
    if metric is None or math.isnan(metric):
        raise ValueError(f"early stopping received a NaN metric ({cfg.monitor})")
    if _improved(metric, state.best, cfg.mode, cfg.threshold):
        state = replace(state, best=metric, num_bad=0)
    else:
        state = replace(state, num_bad=state.num_bad + 1)
    if state.num_bad >= cfg.patience:
        state = replace(state, stopped=True)
    return state.stopped, state


def select_best_checkpoint(history, mode: str = "max") -> int:
    """Index of the best monitored value; ties go to the earliest epoch.

    ``history`` is a sequence of metric values or of ``(epoch, metric)`` pairs.
    """
    if len(history) == 0:
        raise ValueError("cannot select a checkpoint from an empty history")
    best_i, best_v = 0, None
    for i, item in enumerate(history):
        v = item[1] if isinstance(item, (tuple, list)) else item
        if best_v is None or (v > best_v if mode == "max" else v < best_v):
            best_i, best_v = i, v
    first = history[best_i]
    return int(first[0]) if isinstance(first, (tuple, list)) else best_i
