"""Experiment configuration: one JSON document for a whole pipeline run.

Layout::

    {
      "paths":     {"manifest": "...", "labels": "...", "out": "..."},
      "train":     {... TrainConfig ...},
      "split":     {"fractions": [0.8, 0.1, 0.1], "seed": 0},
      "partition": {"head_share": 0.5, "few_shot_threshold": 20},
      "report":    {"formats": ["md", "csv"]}
    }

Every section is optional.  ``paths`` keys are CLI flag names (dashes or
underscores); keys naming inputs must exist when the config is validated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import ValidationError
from .model import TrainConfig
from .sampler import SplitSpec

SECTIONS = ("paths", "train", "split", "partition", "report")
# path keys that name outputs and therefore need not exist yet
OUTPUT_KEYS = frozenset({"out", "out_dir", "figure", "figures", "log_jsonl"})
REPORT_FORMATS = ("json", "csv", "md", "markdown-table", "latex")


@dataclass(frozen=True)
class ExperimentConfig:
    paths: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    head_share: float = 0.5
    few_shot_threshold: int = 20
    report_formats: tuple[str, ...] = ("md",)

    def validate_paths(self, base: Path | None = None) -> None:
        for key, value in self.paths.items():
            if key in OUTPUT_KEYS:
                continue
            values = value if isinstance(value, list) else [value]
            for v in values:
                p = Path(v) if base is None or Path(v).is_absolute() else base / v
                if not p.exists():
                    raise ValidationError(f"config paths.{key}: file not found: {v}")

    def to_dict(self) -> dict:
        return {
            "paths": dict(sorted(self.paths.items())),
            "train": self.train.to_dict(),
            "split": self.split.to_dict(),
            "partition": {"head_share": self.head_share, "few_shot_threshold": self.few_shot_threshold},
            "report": {"formats": list(self.report_formats)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ValidationError(f"config: unknown section(s) {sorted(unknown)}")
        kw = {}
        paths = d.get("paths", {})
        if not isinstance(paths, dict):
            raise ValidationError("config paths must be an object")
        kw["paths"] = {k.replace("-", "_"): v for k, v in paths.items()}
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d["train"])
        if "split" in d:
            s = d["split"]
            bad = set(s) - {"fractions", "seed"}
            if bad:
                raise ValidationError(f"config split: unknown field(s) {sorted(bad)}")
            kw["split"] = SplitSpec(tuple(s.get("fractions", (0.8, 0.1, 0.1))), int(s.get("seed", 0)))
        if "partition" in d:
            p = d["partition"]
            bad = set(p) - {"head_share", "few_shot_threshold"}
            if bad:
                raise ValidationError(f"config partition: unknown field(s) {sorted(bad)}")
            kw["head_share"] = float(p.get("head_share", 0.5))
            kw["few_shot_threshold"] = int(p.get("few_shot_threshold", 20))
            if not 0 < kw["head_share"] < 1:
                raise ValidationError(f"config partition.head_share must lie in (0, 1), got {kw['head_share']}")
        if "report" in d:
            fmts = tuple(d["report"].get("formats", ("md",)))
            bad = [f for f in fmts if f not in REPORT_FORMATS]
            if bad or not fmts:
                raise ValidationError(f"config report.formats: unsupported {bad or 'empty list'}")
            kw["report_formats"] = fmts
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"--config: file not found: {path}")
        try:
            cfg = cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ValidationError(f"--config {path}: invalid JSON at line {e.lineno}: {e.msg}") from None
        cfg.validate_paths()
        return cfg
