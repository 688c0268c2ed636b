import numpy as np
import pytest
from PIL import Image

from ltrkit.data import LongTailPartition
from ltrkit.figures import (
    plot_benchmark,
    plot_class_distribution,
    plot_improvement,
    plot_per_class_accuracy,
    plot_prediction_distribution,
    plot_training_curves,
)
from ltrkit.report import improvement_chart
from published_fixtures import per_class_report, collapse_report

HISTORY = [
    {"epoch": e, "train_acc": 0.5 + 0.05 * e, "val_acc": 0.5 + 0.03 * e,
     "train_loss": 1.0 / (e + 1), "val_loss": 1.2 / (e + 1), "events": ["early_stop"] if e == 5 else []}
    for e in range(6)
]
SUMMARY = {
    "CE + Adam": {"off": {"overall": 0.8, "tail_macro": 0.5}, "on": {"overall": 0.82, "tail_macro": 0.55}},
    "LDAM + AdamW": {"off": {"overall": 0.81, "tail_macro": 0.6}, "on": {"overall": 0.84, "tail_macro": 0.66}},
}


def renderers():
    r3 = per_class_report()
    r4, horse = collapse_report()
    part = LongTailPartition(frozenset({0}), frozenset({1}), frozenset({2}))
    return {
        "distribution": lambda p: plot_class_distribution([500, 40, 3], ["a", "b", "c"], part, p),
        "training": lambda p: plot_training_curves(HISTORY, p, best_epoch=4),
        "per_class": lambda p: plot_per_class_accuracy(r3, p),
        "improvement": lambda p: plot_improvement(improvement_chart(r3, r3), p),
        "collapse": lambda p: plot_prediction_distribution(r4, horse, p),
        "benchmark": lambda p: plot_benchmark(SUMMARY, p),
    }


@pytest.mark.parametrize("name", sorted(renderers()))
class TestFigures:
    def test_writes_png(self, tmp_path, name):
        out = renderers()[name](tmp_path / "sub" / f"{name}.png")
        assert out.exists()
        with Image.open(out) as im:
            assert im.format == "PNG" and min(im.size) > 50
            assert np.asarray(im.convert("L")).std() > 0

    def test_byte_stable(self, tmp_path, name):
        a = renderers()[name](tmp_path / "a.png").read_bytes()
        b = renderers()[name](tmp_path / "b.png").read_bytes()
        assert a == b
