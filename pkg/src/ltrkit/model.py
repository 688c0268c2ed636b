"""Shallow classifier with a hand-written backward pass, featurization and
the training loop (loss, AdamW, plateau schedule, early stop, checkpoints).

The backbone is a stand-in: a linear map or a single ReLU hidden layer over
feature vectors.  Everything downstream of the logits follows the full-size
recipe.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ClassStats, LabelMap, PreprocessSpec, SampleRecord, ValidationError
from .losses import LossSchedule, LossSpec
from .numerics import seeded_rng
from .optim import (
    AdamState,
    EarlyStopConfig,
    OptimConfig,
    PlateauConfig,
    early_stop_init,
    early_stop_observe,
    optimizer_step,
    plateau_init,
    plateau_observe,
    select_best_checkpoint,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ltrkit-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    seed: int = 0
    init_scale: float | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValidationError("model.input_dim and model.num_classes must be >= 1")
        if self.hidden_dim < 0:
            raise ValidationError("model.hidden_dim must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Model:
    """``z = XW + b`` or ``z = relu(X W1 + b1) W2 + b2``."""

    def __init__(self, config: ModelConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        self._check_params()

    @property
    def layers(self) -> list[tuple[int, int]]:
        c = self.config
        if c.hidden_dim == 0:
            return [(c.input_dim, c.num_classes)]
        return [(c.input_dim, c.hidden_dim), (c.hidden_dim, c.num_classes)]

    def _names(self) -> list[tuple[str, str]]:
        if self.config.hidden_dim == 0:
            return [("W", "b")]
        return [("W1", "b1"), ("W2", "b2")]

    def _init_params(self) -> dict:
        rng = seeded_rng(self.config.seed, stream=1)
        params = {}
        for (wn, bn), (fan_in, fan_out) in zip(self._names(), self.layers):
            limit = self.config.init_scale
            if limit is None:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
            u = rng.uniform(fan_in * fan_out).reshape(fan_in, fan_out)
            params[wn] = (2.0 * u - 1.0) * limit
            params[bn] = np.zeros(fan_out)
        return params

    def _check_params(self) -> None:
        for (wn, bn), shape in zip(self._names(), self.layers):
            if self.params[wn].shape != shape or self.params[bn].shape != (shape[1],):
                raise ValidationError(f"parameter shapes do not match model config for {wn}/{bn}")

    def _check_features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"features: expected (B, {self.config.input_dim}), got {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check_features(x)
        p = self.params
        if self.config.hidden_dim == 0:
            return x @ p["W"] + p["b"]
        h = np.maximum(x @ p["W1"] + p["b1"], 0.0)
        return h @ p["W2"] + p["b2"]

    def backward(self, x, dlogits) -> dict:
        x = self._check_features(x)
        g = np.asarray(dlogits, dtype=np.float64)
        if g.shape != (x.shape[0], self.config.num_classes):
            raise ValueError(f"dlogits: expected {(x.shape[0], self.config.num_classes)}, got {g.shape}")
        p = self.params
        if self.config.hidden_dim == 0:
            return {"W": x.T @ g, "b": g.sum(axis=0)}
        pre = x @ p["W1"] + p["b1"]
        h = np.maximum(pre, 0.0)
        dh = (g @ p["W2"].T) * (pre > 0)
        return {"W1": x.T @ dh, "b1": dh.sum(axis=0), "W2": h.T @ g, "b2": g.sum(axis=0)}

    def predict(self, x) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest class id
        return np.argmax(self.forward(x), axis=1)

    def weights_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.params.items()}


def forward(model: Model, features) -> np.ndarray:
    return model.forward(features)


def backward(model: Model, features, dlogits) -> dict:
    return model.backward(features, dlogits)


# Featurization


def normalize_image(pixels, spec: PreprocessSpec) -> np.ndarray:
    """HxWx3 values on the 0..255 scale -> per-channel ``(x/255 - mu) / sigma``."""
    a = np.asarray(pixels, dtype=np.float64) / 255.0
    return (a - np.asarray(spec.mean)) / np.asarray(spec.std)


def _load_image(path, spec: PreprocessSpec) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB").resize((spec.target_size[1], spec.target_size[0]), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64)
    # channel-first flattening, as image tensors are laid out
    return normalize_image(arr, spec).transpose(2, 0, 1).reshape(-1)


def featurize(
    records: Sequence[SampleRecord],
    mode: str = "vectors",
    preprocess: PreprocessSpec | None = None,
    standardize: tuple[np.ndarray, np.ndarray] | None = None,
    image_root=None,
) -> tuple[np.ndarray, list[int]]:
    """Feature matrix plus the indices of the records that produced a row.

    Records whose image cannot be decoded are skipped and logged.
    """
    rows, kept = [], []
    if mode == "vectors":
        for i, r in enumerate(records):
            if r.features is None:
                raise ValidationError(f"record {i} ({r.image_ref}): no feature vector for vectors mode")
            rows.append(r.features)
            kept.append(i)
        if len({len(r) for r in rows}) > 1:
            raise ValidationError("feature vectors have inconsistent lengths")
        x = np.asarray(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)
        if standardize is not None:
            mean, std = standardize
            x = (x - mean) / std
        return x, kept
    if mode != "tiny-image":
        raise ValidationError(f"unknown featurize mode {mode!r}")
    spec = preprocess or PreprocessSpec()
    root = Path(image_root) if image_root is not None else None
    for i, r in enumerate(records):
        path = root / r.image_ref if root is not None else Path(r.image_ref)
        try:
            rows.append(_load_image(path, spec))
            kept.append(i)
        except Exception as e:  # noqa: BLE001 - any decoder failure skips the sample
            log.warning("skipping undecodable image %s: %s", r.image_ref, e)
    dim = 3 * spec.target_size[0] * spec.target_size[1]
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    return x, kept


def records_to_arrays(records: Sequence[SampleRecord], **kw) -> tuple[np.ndarray, np.ndarray]:
    x, kept = featurize(records, **kw)
    y = np.asarray([records[i].label for i in kept], dtype=np.int64)
    return x, y


# Training


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    scheduler: PlateauConfig | None = field(default_factory=PlateauConfig)
    early_stop: EarlyStopConfig | None = field(default_factory=EarlyStopConfig)
    batch_size: int = 128
    max_epochs: int = 300
    seed: int = 0
    hidden_dim: int = 0
    init_scale: float | None = None
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.to_dict(),
            "optim": self.optim.to_dict(),
            "scheduler": None if self.scheduler is None else self.scheduler.to_dict(),
            "early_stop": None if self.early_stop is None else self.early_stop.to_dict(),
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "seed": self.seed,
            "hidden_dim": self.hidden_dim,
            "init_scale": self.init_scale,
            "preprocess": self.preprocess.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {"loss", "optim", "scheduler", "early_stop", "batch_size", "max_epochs",
                 "seed", "hidden_dim", "init_scale", "preprocess"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"train config: unknown field(s) {sorted(unknown)}")
        kw = {k: d[k] for k in ("batch_size", "max_epochs", "seed", "hidden_dim", "init_scale") if k in d}
        if "loss" in d:
            kw["loss"] = LossSpec.from_dict(d["loss"])
        if "optim" in d:
            kw["optim"] = OptimConfig.from_dict(d["optim"])
        if "scheduler" in d:
            kw["scheduler"] = None if d["scheduler"] is None else PlateauConfig.from_dict(d["scheduler"])
        if "early_stop" in d:
            kw["early_stop"] = None if d["early_stop"] is None else EarlyStopConfig.from_dict(d["early_stop"])
        if "preprocess" in d:
            kw["preprocess"] = PreprocessSpec.from_dict(d["preprocess"])
        try:
            return cls(**kw)
        except TypeError as e:
            raise ValidationError(f"train config: {e}") from None


@dataclass
class Checkpoint:
    model: Model
    epoch: int
    metric_name: str
    metric: float
    config: TrainConfig
    classes: tuple[str, ...] = ()
    rng_digest: str = ""
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "metric_name": self.metric_name,
            "metric": self.metric,
            "classes": list(self.classes),
            "model": self.model.config.to_dict(),
            "weights": self.model.weights_dict(),
            "train_config": self.config.to_dict(),
            "rng_digest": self.rng_digest,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError("not an ltrkit checkpoint (missing/incorrect 'format')")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {d.get('version')!r}")
        mcfg = ModelConfig.from_dict(d["model"])
        params = {k: np.asarray(v, dtype=np.float64) for k, v in d["weights"].items()}
        return cls(
            model=Model(mcfg, params),
            epoch=int(d["epoch"]),
            metric_name=d["metric_name"],
            metric=float(d["metric"]),
            config=TrainConfig.from_dict(d["train_config"]),
            classes=tuple(d.get("classes", ())),
            rng_digest=d.get("rng_digest", ""),
            provenance=d.get("provenance", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def macro_recall(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    """Mean per-class recall over classes present in ``y_true``."""
    present = np.bincount(y_true, minlength=num_classes)
    hits = np.bincount(y_true[y_pred == y_true], minlength=num_classes)
    mask = present > 0
    if not mask.any():
        return float("nan")
    return float(np.mean(hits[mask] / present[mask]))


def validation_metrics(model: Model, x, y, loss_fn: LossSchedule, epoch: int) -> dict:
    logits = model.forward(x)
    loss, _ = loss_fn(logits, y, epoch)
    pred = np.argmax(logits, axis=1)
    return {
        "loss": loss,
        "acc": float(np.mean(pred == y)) if y.size else float("nan"),
        "macro_recall": macro_recall(y, pred, model.config.num_classes),
    }


def _epoch_stream(seed: int, epoch: int) -> int:
    h = hashlib.sha256(f"{seed}:{epoch}".encode()).digest()
    return int.from_bytes(h[:8], "little")


MONITORS = {"val_macro_recall": "macro_recall", "val_acc": "acc", "val_loss": "loss"}


def train(
    train_x,
    train_y,
    val_x,
    val_y,
    cfg: TrainConfig,
    num_classes: int | None = None,
    classes: Sequence[str] = (),
    on_epoch=None,
) -> tuple[Checkpoint, list[dict]]:
    """Train and return ``(best checkpoint, per-epoch history)``.

    The monitored metric (scheduler's, else early stop's, else validation
    macro recall) selects the best epoch.  ``on_epoch`` receives each
    history row as it is produced.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_x = np.asarray(val_x, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=np.int64)
    if train_y.size == 0 or val_y.size == 0:
        raise ValidationError("train and validation sets must be non-empty")
    if num_classes is None:
        num_classes = len(classes) if classes else int(max(train_y.max(), val_y.max())) + 1
    if train_y.max() >= num_classes or val_y.max() >= num_classes:
        raise ValidationError("labels exceed the configured number of classes")
    if train_x.shape[1] != val_x.shape[1]:
        raise ValidationError("train and validation feature dimensions differ")

    mcfg = ModelConfig(train_x.shape[1], num_classes, cfg.hidden_dim, cfg.seed, cfg.init_scale)
    model = Model(mcfg)
    stats = ClassStats(tuple(np.bincount(train_y, minlength=num_classes)))
    loss_fn = LossSchedule(cfg.loss, stats)

    monitor_cfg = cfg.scheduler or cfg.early_stop
    monitor = monitor_cfg.monitor if monitor_cfg else "val_macro_recall"
    mode = monitor_cfg.mode if monitor_cfg else "max"
    if monitor not in MONITORS:
        raise ValidationError(f"unknown monitored metric {monitor!r}; choose from {sorted(MONITORS)}")

    lr = cfg.optim.lr
    opt_state = AdamState()
    sched = plateau_init(lr, cfg.scheduler) if cfg.scheduler else None
    stopper = early_stop_init(cfg.early_stop) if cfg.early_stop else None

    history: list[dict] = []
    best = None
    n = train_y.size
    for epoch in range(cfg.max_epochs):
        rng = seeded_rng(cfg.seed, stream=_epoch_stream(cfg.seed, epoch))
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            logits = model.forward(xb)
            try:
                loss, dlogits = loss_fn(logits, yb, epoch)
            except ValueError as e:  # non-finite logits
                raise TrainingError(f"epoch {epoch}, batch {bi}: {e}") from None
            if not math.isfinite(loss):
                raise TrainingError(f"epoch {epoch}, batch {bi}: non-finite loss {loss}")
            grads = model.backward(xb, dlogits)
            model.params, opt_state = optimizer_step(model.params, grads, opt_state, cfg.optim, lr)
            loss_sum += loss * idx.size
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        val = validation_metrics(model, val_x, val_y, loss_fn, epoch)
        metric = val[MONITORS[monitor]]
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "val_loss": val["loss"],
            "val_acc": val["acc"],
            "val_macro_recall": val["macro_recall"],
            "monitor": monitor,
            "events": [],
        }
        improved = best is None or (metric > best.metric if mode == "max" else metric < best.metric)
        if improved:
            best = Checkpoint(
                model=Model(mcfg, {k: v.copy() for k, v in model.params.items()}),
                epoch=epoch,
                metric_name=monitor,
                metric=metric,
                config=cfg,
                classes=tuple(classes),
                rng_digest=rng.state_digest(),
            )
            row["events"].append("checkpoint")
        if sched is not None:
            new_lr, sched = plateau_observe(sched, metric, cfg.scheduler)
            if new_lr < lr:
                row["events"].append(f"lr_reduced:{new_lr:.3g}")
                log.info("epoch %d: lr %.3g -> %.3g", epoch, lr, new_lr)
            lr = new_lr
        stop = False
        if stopper is not None:
            stop, stopper = early_stop_observe(stopper, metric, cfg.early_stop)
            if stop:
                row["events"].append("early_stop")
                log.info("early stop at epoch %d", epoch)
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if stop:
            break

    assert select_best_checkpoint([h[monitor] for h in history], mode) == best.epoch
    return best, history


def history_lines(history: Sequence[dict]) -> str:
    return "".join(json.dumps(h, sort_keys=True) + "\n" for h in history)
