"""Training recipe: loss, schedule, optimizer, metrics, and the epoch loop."""

import math

import numpy as np
import pytest

from act import model as M
from act import tensor as T
from act import train as TR
from act.data import stratified_folds
from act.errors import ConfigError, DataError, NumericsError, ParameterError
from act.synth import synth_generate
from act.tensor import Tape, Tensor
from act.train import TrainConfig


def tiny_model(**overrides):
    base = dict(seq_len=30, in_features=8, num_classes=4, d_model=16,
                num_heads=2, head_dim=8, num_layers=1, d_ffn=32,
                head_hidden=12, name="tiny")
    base.update(overrides)
    return M.ModelConfig(**base)


class TestTrainConfig:
    def test_published_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 350
        assert cfg.batch_size == 512
        assert cfg.warmup_fraction == 0.40
        assert cfg.step_fraction == 0.80
        assert cfg.post_step_lr == 1e-4
        assert cfg.weight_decay == 1e-4
        assert cfg.label_smoothing == 0.1
        assert cfg.dropout == 0.3
        assert cfg.flip_probability == 0.5
        assert cfg.noise_sigma == 0.03
        assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.98, 1e-9)

    @pytest.mark.parametrize("bad", [
        dict(warmup_fraction=0.9, step_fraction=0.8),
        dict(warmup_fraction=0.0),
        dict(step_fraction=1.1),
        dict(weight_decay=-1e-4),
        dict(label_smoothing=1.0),
        dict(epochs=0),
        dict(adam_eps=0.0),
    ])
    def test_invalid_configs_rejected(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


class TestLabelSmoothedCE:
    def test_uniform_logits_give_log_c_for_any_epsilon(self):
        logits = Tensor(np.zeros((5, 20)))
        labels = np.arange(5)
        for eps in (0.0, 0.1, 0.5):
            loss = TR.label_smoothed_ce(logits, labels, eps)
            assert loss.item() == pytest.approx(math.log(20), abs=1e-9)

    def test_peaked_logits_drive_unsmoothed_loss_to_zero(self):
        logits = np.full((2, 3), -50.0)
        logits[0, 0] = 50.0
        logits[1, 2] = 50.0
        loss = TR.label_smoothed_ce(Tensor(logits), np.array([0, 2]), 0.0)
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_two_sample_reference_value(self):
        logits = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        labels = np.array([0, 1])
        eps = 0.1
        # independent 64-bit evaluation of the defining formula
        q = np.full((2, 3), eps / 3)
        q[np.arange(2), labels] += 1 - eps
        lse = np.log(np.exp(logits).sum(axis=1, keepdims=True))
        expected = float(np.mean(-(q * (logits - lse)).sum(axis=1)))
        got = TR.label_smoothed_ce(Tensor(logits), labels, eps).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.618112, abs=1e-6)

    def test_loss_is_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            logits = Tensor(rng.normal(scale=3.0, size=(4, 6)))
            labels = rng.integers(0, 6, size=4)
            assert TR.label_smoothed_ce(logits, labels, 0.1).item() >= 0.0

    def test_sum_reduction(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(3, 5))
        labels = np.array([0, 2, 4])
        mean = TR.label_smoothed_ce(Tensor(logits), labels, 0.1).item()
        total = TR.label_smoothed_ce(Tensor(logits), labels, 0.1,
                                     reduction="sum").item()
        assert total == pytest.approx(3 * mean, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        labels = np.array([1, 0, 3])

        def run(params):
            return TR.label_smoothed_ce(params["logits"], labels, 0.1)

        report = T.grad_check(run, {"logits": rng.normal(size=(3, 4))})
        assert report.max_rel_error <= 1e-4

    def test_label_out_of_range_rejected(self):
        with pytest.raises(DataError):
            TR.label_smoothed_ce(Tensor(np.zeros((2, 3))), np.array([0, 3]), 0.1)

    def test_bad_epsilon_rejected(self):
        with pytest.raises(ParameterError):
            TR.label_smoothed_ce(Tensor(np.zeros((1, 3))), np.array([0]), 1.0)


class TestSchedule:
    # warmup_fraction 0.4 of 2500 steps = 1000 warmup steps
    CFG = TrainConfig(warmup_fraction=0.4, step_fraction=0.8)

    def test_peak_value_closed_form(self):
        lr = TR.lr_schedule(1000, 2500, self.CFG, d_model=64)
        assert lr == pytest.approx(64 ** -0.5 * 1000 ** -0.5, rel=1e-12)
        assert lr == pytest.approx(0.003953, abs=1e-6)

    def test_first_step_closed_form(self):
        lr = TR.lr_schedule(1, 2500, self.CFG, d_model=64)
        assert lr == pytest.approx(0.125 * 1000 ** -1.5, rel=1e-12)
        assert lr == pytest.approx(3.953e-6, abs=1e-9)

    def test_post_drop_constant(self):
        for step in (2000, 2100, 2500, 10_000):
            assert TR.lr_schedule(step, 2500, self.CFG, 64) == 1e-4

    def test_continuity_at_warmup_peak(self):
        # both branches evaluate to d_model^-0.5 * warmup^-0.5 at the peak
        warmup = 1000
        rising = warmup * warmup ** -1.5
        falling = warmup ** -0.5
        assert abs(rising - falling) < 1e-12
        just_before = TR.lr_schedule(999, 2500, self.CFG, 64)
        peak = TR.lr_schedule(1000, 2500, self.CFG, 64)
        just_after = TR.lr_schedule(1001, 2500, self.CFG, 64)
        assert just_before < peak
        assert just_after < peak
        assert abs(just_before - peak) < 1e-5 and abs(just_after - peak) < 1e-5

    def test_warmup_monotone_rising_then_falling(self):
        values = [TR.lr_schedule(s, 2500, self.CFG, 64) for s in range(1, 2000)]
        peak_idx = int(np.argmax(values))
        assert peak_idx == 999  # step 1000
        assert all(a < b for a, b in zip(values[:1000], values[1:1000]))
        assert all(a > b for a, b in zip(values[1000:], values[1001:]))

    def test_step_must_be_positive(self):
        with pytest.raises(ParameterError):
            TR.lr_schedule(0, 100, self.CFG, 64)


class TestAdamW:
    def make(self, dtype=np.float64):
        cfg = tiny_model()
        params = M.init_params(cfg, seed=0, dtype=dtype)
        return params, TR.init_optimizer(params)

    def zero_grads(self, params):
        return {k: np.zeros_like(a) for k, a in params.arrays.items()}

    def test_zero_grad_zero_decay_is_identity(self):
        params, state = self.make()
        before = {k: a.copy() for k, a in params.arrays.items()}
        cfg = TrainConfig(weight_decay=0.0)
        TR.adamw_step(params, self.zero_grads(params), state, 0.01, cfg)
        for k in before:
            np.testing.assert_array_equal(params.arrays[k], before[k])
        assert state.step == 1

    def test_descent_on_quadratic(self):
        # f(theta) = theta^2 / 2, gradient = theta
        cfg = tiny_model()
        params = M.init_params(cfg, seed=0, dtype=np.float64)
        params.arrays["head.b2"][:] = 1.0
        grads = self.zero_grads(params)
        state = TR.init_optimizer(params)
        grads["head.b2"] = params.arrays["head.b2"].copy()
        TR.adamw_step(params, grads, state, 0.1, TrainConfig(weight_decay=0.0))
        assert np.all(params.arrays["head.b2"] < 1.0)
        assert np.all(params.arrays["head.b2"] > 0.0)

    def test_decoupled_decay_shrinks_only_weight_matrices(self):
        params, state = self.make()
        before = {k: a.copy() for k, a in params.arrays.items()}
        cfg = TrainConfig(weight_decay=1e-4)
        TR.adamw_step(params, self.zero_grads(params), state, 0.01, cfg)
        factor = 1.0 - 0.01 * 1e-4
        for k, arr in params.arrays.items():
            if arr.ndim == 2 and k != "pos":
                np.testing.assert_allclose(arr, before[k] * factor, rtol=1e-12)
            else:
                np.testing.assert_array_equal(arr, before[k])

    def test_positional_table_and_class_token_not_decayed(self):
        params, state = self.make()
        pos_before = params.arrays["pos"].copy()
        cls_before = params.arrays["cls"].copy()
        TR.adamw_step(params, self.zero_grads(params), state, 0.5,
                      TrainConfig(weight_decay=0.1))
        np.testing.assert_array_equal(params.arrays["pos"], pos_before)
        np.testing.assert_array_equal(params.arrays["cls"], cls_before)

    def test_non_finite_gradient_names_tensor(self):
        params, state = self.make()
        grads = self.zero_grads(params)
        grads["embed.w"][0, 0] = np.nan
        with pytest.raises(NumericsError, match="embed.w"):
            TR.adamw_step(params, grads, state, 0.01, TrainConfig())

    def test_moment_shapes_mirror_params(self):
        params, state = self.make()
        for k, a in params.arrays.items():
            assert state.m[k].shape == a.shape
            assert state.v[k].shape == a.shape

    def test_converges_on_quadratic(self):
        # repeated steps drive a parameter toward its minimum at zero
        params, state = self.make()
        params.arrays["head.b2"][:] = 1.0
        cfg = TrainConfig(weight_decay=0.0)
        for _ in range(200):
            grads = self.zero_grads(params)
            grads["head.b2"] = params.arrays["head.b2"].copy()
            TR.adamw_step(params, grads, state, 0.05, cfg)
        assert np.abs(params.arrays["head.b2"]).max() < 0.05


class TestMetrics:
    def test_balanced_accuracy_identity(self):
        assert TR.balanced_accuracy(np.eye(4) * 7) == 1.0

    def test_one_class_fully_wrong(self):
        confusion = np.array([[0, 10], [0, 10]])
        assert TR.balanced_accuracy(confusion) == 0.5

    def test_three_class_mean_recall(self):
        confusion = np.array([[10, 0, 0], [5, 5, 0], [8, 2, 0]])
        assert TR.balanced_accuracy(confusion) == pytest.approx((1.0 + 0.5 + 0.0) / 3)

    def test_empty_classes_excluded(self):
        confusion = np.array([[5, 0, 0], [0, 5, 0], [0, 0, 0]])
        assert TR.balanced_accuracy(confusion) == 1.0

    def test_all_empty_rejected(self):
        with pytest.raises(DataError):
            TR.balanced_accuracy(np.zeros((3, 3)))

    def test_reference_confusions(self):
        a = np.array([[10, 0], [5, 5]])
        assert np.trace(a) / a.sum() == 0.75
        assert TR.balanced_accuracy(a) == pytest.approx(0.75)
        b = np.array([[9, 1], [0, 90]])
        assert np.trace(b) / b.sum() == 0.99
        assert TR.balanced_accuracy(b) == pytest.approx(0.95)

    def test_summarize_folds(self):
        ms = [TR.Metrics(0.8, 0.7, np.eye(2)), TR.Metrics(0.6, 0.9, np.eye(2))]
        s = TR.summarize_folds(ms)
        assert s["folds"] == 2
        assert s["accuracy_mean"] == pytest.approx(0.7)
        assert s["balanced_accuracy_mean"] == pytest.approx(0.8)
        assert s["accuracy_std"] == pytest.approx(0.1)


@pytest.fixture(scope="module")
def eval_setup():
    ds = synth_generate(classes=4, train_per_class=12, test_per_class=6,
                        in_features=8, seed=0)
    cfg = tiny_model(in_features=8, num_classes=4)
    params = M.init_params(cfg, seed=0)
    return ds, params


class TestEvaluate:

    def test_confusion_rows_are_true_class_counts(self, eval_setup):
        ds, params = eval_setup
        metrics = TR.evaluate(params, ds.test)
        counts = np.bincount([s.label for s in ds.test], minlength=4)
        np.testing.assert_array_equal(metrics.confusion.sum(axis=1), counts)
        assert metrics.confusion.sum() == len(ds.test)

    def test_accuracy_is_trace_over_total(self, eval_setup):
        ds, params = eval_setup
        metrics = TR.evaluate(params, ds.test)
        expected = np.trace(metrics.confusion) / metrics.confusion.sum()
        assert metrics.accuracy == pytest.approx(expected)

    def test_order_independence(self, eval_setup):
        ds, params = eval_setup
        rng = np.random.default_rng(5)
        shuffled = list(ds.test)
        rng.shuffle(shuffled)
        a = TR.evaluate(params, ds.test)
        b = TR.evaluate(params, shuffled)
        assert a.accuracy == b.accuracy
        assert a.balanced_accuracy == b.balanced_accuracy
        np.testing.assert_array_equal(a.confusion, b.confusion)

    def test_max_frames_caps_input(self, eval_setup):
        ds, params = eval_setup
        full = TR.evaluate(params, ds.test)
        capped = TR.evaluate(params, ds.test, max_frames=20)
        assert capped.confusion.sum() == full.confusion.sum()
        big = TR.evaluate(params, ds.test, max_frames=30)
        assert big.accuracy == full.accuracy

    def test_width_mismatch_rejected(self, eval_setup):
        ds, _ = eval_setup
        wrong = M.init_params(tiny_model(in_features=12), seed=0)
        with pytest.raises(ConfigError):
            TR.evaluate(wrong, ds.test)

    def test_empty_split_rejected(self, eval_setup):
        _, params = eval_setup
        with pytest.raises(DataError):
            TR.evaluate(params, [])


class TestTrainOne:
    def make(self, **train_overrides):
        ds = synth_generate(classes=3, train_per_class=10, test_per_class=3,
                            in_features=8, seed=1)
        folds = stratified_folds(ds.train, folds=5, val_fraction=0.2, seed=0)
        cfg = tiny_model(in_features=8, num_classes=3)
        defaults = dict(epochs=2, batch_size=8, seed=3)
        defaults.update(train_overrides)
        return ds, folds, cfg, TrainConfig(**defaults)

    def test_history_has_one_entry_per_epoch(self):
        ds, folds, cfg, tc = self.make(epochs=3)
        _, history = TR.train_one(cfg, ds, folds, 0, tc)
        assert len(history) == 3
        for i, rec in enumerate(history, start=1):
            assert rec["epoch"] == i
            assert set(rec) == {"epoch", "lr", "train_loss", "val_accuracy",
                                "val_balanced_accuracy"}

    def test_same_seed_identical_history_and_params(self):
        ds, folds, cfg, tc = self.make()
        p1, h1 = TR.train_one(cfg, ds, folds, 0, tc)
        p2, h2 = TR.train_one(cfg, ds, folds, 0, tc)
        assert h1 == h2
        for k in p1.arrays:
            np.testing.assert_array_equal(p1.arrays[k], p2.arrays[k])

    def test_different_seed_differs(self):
        ds, folds, cfg, tc = self.make()
        _, h1 = TR.train_one(cfg, ds, folds, 0, tc)
        _, h2 = TR.train_one(cfg, ds, folds, 0,
                             TrainConfig(epochs=2, batch_size=8, seed=4))
        assert h1 != h2

    def test_oversized_batch_warns_and_proceeds(self):
        ds, folds, cfg, _ = self.make()
        tc = TrainConfig(epochs=1, batch_size=512, seed=0)
        with pytest.warns(UserWarning, match="batch size"):
            _, history = TR.train_one(cfg, ds, folds, 0, tc)
        assert len(history) == 1

    def test_early_stop_threshold(self):
        ds, folds, cfg, tc = self.make(epochs=50)
        _, history = TR.train_one(cfg, ds, folds, 0, tc,
                                  stop_at_balanced_accuracy=0.0)
        assert len(history) == 1  # any score meets a zero threshold

    def test_invalid_fold_index(self):
        ds, folds, cfg, tc = self.make()
        with pytest.raises(ParameterError):
            TR.train_one(cfg, ds, folds, 99, tc)

    def test_best_params_selected_by_validation_score(self):
        ds, folds, cfg, tc = self.make(epochs=3)
        best, history = TR.train_one(cfg, ds, folds, 0, tc)
        val = TR.evaluate(best, [ds.train[i] for i in folds[0][1]])
        assert val.balanced_accuracy == pytest.approx(
            max(h["val_balanced_accuracy"] for h in history))

    def test_fixed_batch_loss_strictly_decreases(self):
        # gradient sanity: full-batch steps on one small batch, no dropout,
        # modest constant rate; the deterministic objective must fall each step
        ds, _, cfg, _ = self.make()
        samples = [s for s in ds.train if s.length == ds.train[0].length][:6]
        x = np.stack([s.features for s in samples]).astype(np.float64)
        y = np.array([s.label for s in samples])
        import dataclasses as dc
        cfg64 = dc.replace(cfg, dropout_rate=0.0)
        params = M.init_params(cfg64, seed=0, dtype=np.float64)
        state = TR.init_optimizer(params)
        tc = TrainConfig(weight_decay=0.0)
        losses = []
        for _ in range(10):
            tape = Tape()
            leaves = M.params_on_tape(params, tape)
            logits, _ = M.forward_graph(leaves, x, cfg64)
            loss = TR.label_smoothed_ce(logits, y, 0.1)
            tape.backward(loss)
            losses.append(loss.item())
            grads = {k: Tape.gradient(v) for k, v in leaves.items()}
            TR.adamw_step(params, grads, state, 1e-3, tc)
        assert all(a > b for a, b in zip(losses, losses[1:])), losses


class TestHistoryIO:
    def test_round_trip(self, tmp_path):
        history = [{"epoch": 1, "lr": 0.1, "train_loss": 2.0,
                    "val_accuracy": 0.5, "val_balanced_accuracy": 0.4}]
        path = tmp_path / "h.jsonl"
        TR.write_history(path, history)
        assert TR.read_history(path) == history

    def test_corrupt_line_reports_position(self, tmp_path):
        path = tmp_path / "h.jsonl"
        path.write_text('{"epoch": 1}\nnot json\n')
        with pytest.raises(DataError, match=":2"):
            TR.read_history(path)
