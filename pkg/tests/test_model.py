import dataclasses
import math

import numpy as np
import pytest
from PIL import Image

from conftest import synthetic_records
from ltrkit.data import PreprocessSpec, SampleRecord, ValidationError
from ltrkit.losses import LossSpec
from ltrkit.model import (
    Checkpoint,
    Model,
    ModelConfig,
    TrainConfig,
    TrainingError,
    featurize,
    normalize_image,
    records_to_arrays,
    train,
    validation_metrics,
)
from ltrkit.losses import LossSchedule
from ltrkit.data import ClassStats
from ltrkit.numerics import finite_diff_grad, max_relative_error, seeded_rng
from ltrkit.optim import EarlyStopConfig, OptimConfig, PlateauConfig


def naive_forward(x, params, hidden):
    """Triple-loop reference for the forward pass."""
    def affine(a, w, b):
        out = [[b[j] for j in range(len(b))] for _ in range(len(a))]
        for i in range(len(a)):
            for j in range(len(b)):
                for k in range(len(w)):
                    out[i][j] += a[i][k] * w[k][j]
        return out
    if not hidden:
        return np.array(affine(x.tolist(), params["W"].tolist(), params["b"].tolist()))
    h = affine(x.tolist(), params["W1"].tolist(), params["b1"].tolist())
    h = [[max(v, 0.0) for v in row] for row in h]
    return np.array(affine(h, params["W2"].tolist(), params["b2"].tolist()))


def arrays(seed=0, counts=(120, 80, 40, 24, 12, 6)):
    recs = synthetic_records(counts, seed=seed)
    x, y = records_to_arrays(recs)
    idx = seeded_rng(seed, 9).permutation(len(y))
    cut = int(0.8 * len(y))
    return x[idx[:cut]], y[idx[:cut]], x[idx[cut:]], y[idx[cut:]]


class TestModel:
    def test_zero_params_zero_logits(self):
        m = Model(ModelConfig(3, 4), {"W": np.zeros((3, 4)), "b": np.zeros(4)})
        np.testing.assert_array_equal(m.forward(np.ones((2, 3))), np.zeros((2, 4)))

    def test_identity_weights(self):
        m = Model(ModelConfig(3, 3), {"W": np.eye(3), "b": np.zeros(3)})
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(m.forward(x), x)

    @pytest.mark.parametrize("hidden", [0, 5])
    def test_forward_matches_naive(self, hidden):
        m = Model(ModelConfig(4, 3, hidden, seed=2))
        x = seeded_rng(1).normal(24).reshape(6, 4)
        np.testing.assert_allclose(m.forward(x), naive_forward(x, m.params, hidden), rtol=0, atol=1e-12)

    def test_glorot_bounds_and_zero_bias(self):
        m = Model(ModelConfig(10, 6, seed=0))
        assert np.abs(m.params["W"]).max() <= math.sqrt(6 / 16)
        np.testing.assert_array_equal(m.params["b"], 0.0)

    def test_init_deterministic(self):
        a, b = Model(ModelConfig(5, 3, 4, seed=7)), Model(ModelConfig(5, 3, 4, seed=7))
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_zero_upstream_zero_grads(self):
        m = Model(ModelConfig(4, 3, 5, seed=1))
        g = m.backward(np.ones((2, 4)), np.zeros((2, 3)))
        for v in g.values():
            np.testing.assert_array_equal(v, 0.0)

    def test_linear_outer_product(self):
        m = Model(ModelConfig(3, 2, seed=1))
        x = np.array([[1.0, 2.0, 3.0]])
        dz = np.array([[0.5, -1.0]])
        g = m.backward(x, dz)
        np.testing.assert_array_equal(g["W"], np.outer(x[0], dz[0]))
        np.testing.assert_array_equal(g["b"], dz[0])

    def test_hidden_backward_finite_difference(self):
        m = Model(ModelConfig(4, 3, 6, seed=3))
        rng = seeded_rng(4)
        x = rng.normal(20).reshape(5, 4)
        dz = rng.normal(15).reshape(5, 3)
        grads = m.backward(x, dz)
        for name in m.params:
            base = m.params[name]

            def f(v, name=name):
                m.params[name] = v
                out = float(np.sum(m.forward(x) * dz))
                m.params[name] = base
                return out

            assert max_relative_error(grads[name], finite_diff_grad(f, base, h=1e-5)) < 1e-6

    def test_predict_ties_lowest_id(self):
        m = Model(ModelConfig(1, 3), {"W": np.zeros((1, 3)), "b": np.array([1.0, 2.0, 2.0])})
        assert m.predict(np.zeros((1, 1))).tolist() == [1]

    def test_bad_feature_shape(self):
        with pytest.raises(ValueError, match="expected"):
            Model(ModelConfig(3, 2)).forward(np.ones((2, 4)))


class TestFeaturize:
    def test_normalize_mean_to_zero_and_sigma_to_one(self):
        spec = PreprocessSpec()
        mu = np.array(spec.mean) * 255
        sd = np.array(spec.std) * 255
        np.testing.assert_allclose(normalize_image(mu[None, None, :], spec), 0.0, atol=1e-15)
        np.testing.assert_allclose(normalize_image((mu + sd)[None, None, :], spec), 1.0, rtol=1e-14)

    def test_vectors_mode(self):
        recs = [SampleRecord("a", 0, features=(1.0, 2.0)), SampleRecord("b", 1, features=(3.0, 4.0))]
        x, kept = featurize(recs)
        np.testing.assert_array_equal(x, [[1, 2], [3, 4]])
        assert kept == [0, 1]

    def test_vectors_missing_named(self):
        with pytest.raises(ValidationError, match=r"record 1 \(b\)"):
            featurize([SampleRecord("a", 0, features=(1.0,)), SampleRecord("b", 0)])

    def test_ragged_vectors(self):
        with pytest.raises(ValidationError, match="inconsistent"):
            featurize([SampleRecord("a", 0, features=(1.0,)), SampleRecord("b", 0, features=(1.0, 2.0))])

    def test_tiny_image_skips_undecodable(self, tmp_path):
        Image.new("RGB", (20, 10), (124, 116, 104)).save(tmp_path / "ok.png")
        (tmp_path / "bad.png").write_bytes(b"not an image")
        recs = [SampleRecord("ok.png", 0), SampleRecord("bad.png", 1), SampleRecord("missing.png", 1)]
        spec = PreprocessSpec((4, 4))
        x, kept = featurize(recs, mode="tiny-image", preprocess=spec, image_root=tmp_path)
        assert kept == [0] and x.shape == (1, 48)
        expected = (np.array([124, 116, 104]) / 255 - np.array(spec.mean)) / np.array(spec.std)
        np.testing.assert_allclose(x.reshape(3, 16)[:, 0], expected, rtol=1e-12)


class TestTrain:
    def cfg(self, **kw):
        base = dict(loss=LossSpec("ce"), optim=OptimConfig("adamw", lr=0.05), scheduler=PlateauConfig(),
                    early_stop=EarlyStopConfig(), batch_size=32, max_epochs=30, seed=0)
        base.update(kw)
        return TrainConfig(**base)

    def test_one_epoch(self):
        ck, hist = train(*arrays(), self.cfg(max_epochs=1))
        assert len(hist) == 1 and ck.epoch == 0

    def test_deterministic_history(self):
        a = train(*arrays(), self.cfg())
        b = train(*arrays(), self.cfg())
        assert a[1] == b[1]
        assert a[0].dumps() == b[0].dumps()

    def test_overfits_small_problem(self):
        x, y, vx, vy = arrays(counts=(20, 20, 20))
        _, hist = train(x, y, vx, vy, self.cfg(optim=OptimConfig("adam", lr=0.1), scheduler=None,
                                              early_stop=None, max_epochs=60, hidden_dim=16))
        assert hist[-1]["train_acc"] == 1.0

    def test_initial_loss_is_log_c(self):
        x, y, vx, vy = arrays()
        ck, hist = train(x, y, vx, vy, self.cfg(init_scale=1e-9, max_epochs=1, optim=OptimConfig("adam", lr=1e-12)))
        assert hist[0]["val_loss"] == pytest.approx(math.log(6), rel=1e-6)

    @pytest.mark.parametrize("loss", [LossSpec("wce"), LossSpec("focal"), LossSpec("ldam"),
                                      LossSpec("ce", drw_defer_epoch=3)])
    def test_every_loss_trains(self, loss):
        ck, hist = train(*arrays(), self.cfg(loss=loss, max_epochs=8))
        assert hist[-1]["train_loss"] < hist[0]["train_loss"] or ck.metric > 0.5

    def test_best_checkpoint_is_max_monitor(self):
        ck, hist = train(*arrays(), self.cfg())
        best = max(h["val_macro_recall"] for h in hist)
        assert ck.metric == best
        assert ck.epoch == [h["val_macro_recall"] for h in hist].index(best)

    def test_scheduler_and_stop_events(self):
        _, hist = train(*arrays(), self.cfg(max_epochs=200))
        events = [e for h in hist for e in h["events"]]
        assert any(e.startswith("lr_reduced") for e in events)
        assert hist[-1]["events"][-1] == "early_stop"
        lrs = [h["lr"] for h in hist]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    def test_non_finite_loss_names_epoch_and_batch(self):
        x, y, vx, vy = arrays()
        x = x.copy()
        x[40] = 1e308
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(TrainingError, match="epoch 0, batch 0"):
            train(x, y, vx, vy, self.cfg(batch_size=len(y)))

    def test_checkpoint_reload_reproduces_metric(self, tmp_path):
        x, y, vx, vy = arrays()
        ck, _ = train(x, y, vx, vy, self.cfg(loss=LossSpec("ldam")))
        ck.save(tmp_path / "c.json")
        back = Checkpoint.load(tmp_path / "c.json")
        fn = LossSchedule(back.config.loss, ClassStats(tuple(np.bincount(y, minlength=6))))
        m = validation_metrics(back.model, vx, vy, fn, back.epoch)["macro_recall"]
        assert abs(m - ck.metric) <= 1e-10
        np.testing.assert_array_equal(back.model.forward(vx), ck.model.forward(vx))
        assert back.config == ck.config

    def test_checkpoint_format_checked(self):
        with pytest.raises(ValidationError, match="format"):
            Checkpoint.from_dict({"format": "x"})

    def test_empty_sets_rejected(self):
        x, y, vx, vy = arrays()
        with pytest.raises(ValidationError, match="non-empty"):
            train(x, y, vx[:0], vy[:0], self.cfg())

    def test_config_roundtrip(self):
        cfg = self.cfg(loss=LossSpec("focal", gamma=0.5), scheduler=None, hidden_dim=3)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_config_unknown_field(self):
        with pytest.raises(ValidationError, match="epochs"):
            TrainConfig.from_dict({"epochs": 3})

    def test_config_invariants(self):
        with pytest.raises(ValidationError, match="batch_size"):
            self.cfg(batch_size=0)
        with pytest.raises(ValidationError, match="max_epochs"):
            dataclasses.replace(self.cfg(), max_epochs=0)
