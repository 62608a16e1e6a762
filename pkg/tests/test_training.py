"""Optimization loop behavior: determinism, early stopping, divergence
detection, and checkpoint resumption."""

from dataclasses import replace

import numpy as np
import pytest

from apesed.dataset import Split, make_split
from apesed.errors import (BadConfig, DivergenceError, EmptySplit,
                           IncompatibleCheckpoint)
from apesed.neural.checkpoint import save_checkpoint
from apesed.neural.model import ModelConfig, init
from apesed.training import (Adam, TrainConfig, clip_gradients, resume, train)


def model_cfg(num_class=3, **kw):
    base = dict(arch="lstm", input_dim=201, hidden_size=8, num_class=num_class)
    base.update(kw)
    return ModelConfig(**base)


def train_cfg(**kw):
    base = dict(max_epochs=3, patience=20, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus_split(small_corpus):
    corpus, _ = small_corpus
    return corpus, make_split(corpus, 0)


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(BadConfig):
            TrainConfig(batch_size=0)
        with pytest.raises(BadConfig):
            TrainConfig(max_epochs=0)
        with pytest.raises(BadConfig):
            TrainConfig(patience=0)

    def test_arity_checked_against_corpus(self, corpus_split):
        corpus, split = corpus_split
        with pytest.raises(BadConfig):
            train(corpus, split, model_cfg(num_class=2), train_cfg())
        with pytest.raises(BadConfig):
            train(corpus, split, model_cfg(num_class=3), train_cfg(binary=True))

    def test_empty_split(self, corpus_split):
        corpus, _ = corpus_split
        bad = Split(0, tuple(corpus.clip_ids), (), ())
        with pytest.raises(EmptySplit):
            train(corpus, bad, model_cfg(), train_cfg())


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        """Bias correction makes the first update lr * g/(|g| + eps), so its
        size is essentially lr whatever the gradient scale."""
        for g in (1e-3, 5.0):
            model = init(ModelConfig(arch="lstm", input_dim=2, hidden_size=2,
                                     num_class=2), seed=0)
            adam = Adam(model, lr=0.5)
            before = {k: p.data.copy() for k, p in model.params.items()}
            grads = {k: np.full_like(p.data, g) for k, p in model.params.items()}
            adam.step(grads)
            want_delta = 0.5 * g / (g + 1e-8)
            for k, p in model.params.items():
                np.testing.assert_allclose(p.data, before[k] - want_delta,
                                           rtol=1e-5)

    def test_step_preserves_dtype(self):
        model = init(ModelConfig(arch="lstm", input_dim=2, hidden_size=2,
                                 num_class=2), seed=0)
        adam = Adam(model, lr=1e-4)
        grads = {k: np.ones_like(p.data) for k, p in model.params.items()}
        adam.step(grads)
        assert model.dtype == np.float32


class TestClipGradients:
    def test_under_limit_untouched(self):
        grads = {"a": np.array([1.0, 2.0])}
        assert clip_gradients(grads) is False
        np.testing.assert_array_equal(grads["a"], [1.0, 2.0])

    def test_over_limit_scaled_to_norm(self):
        grads = {"a": np.array([30.0, 40.0]), "b": np.array([0.0])}
        assert clip_gradients(grads) is True
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        assert total == pytest.approx(5.0)
        np.testing.assert_allclose(grads["a"], [3.0, 4.0])

    def test_zero_gradients(self):
        grads = {"a": np.zeros(3)}
        assert clip_gradients(grads) is False


class TestTrainLoop:
    def test_smoke_and_log_shape(self, corpus_split):
        corpus, split = corpus_split
        model, log = train(corpus, split, model_cfg(), train_cfg())
        assert len(log.records) == 3
        assert [r["epoch"] for r in log.records] == [1, 2, 3]
        for r in log.records:
            assert np.isfinite(r["train_loss"])
            assert 0.0 <= r["val_weighted_f1"] <= 1.0
        assert log.stopped_reason == "max_epochs"
        assert 1 <= log.best_epoch <= 3

    def test_deterministic(self, corpus_split):
        corpus, split = corpus_split
        m1, l1 = train(corpus, split, model_cfg(), train_cfg())
        m2, l2 = train(corpus, split, model_cfg(), train_cfg())
        assert l1.records == l2.records
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k].data, m2.params[k].data)

    def test_seed_changes_run(self, corpus_split):
        corpus, split = corpus_split
        _, l1 = train(corpus, split, model_cfg(), train_cfg(seed=0))
        _, l2 = train(corpus, split, model_cfg(), train_cfg(seed=1))
        assert l1.records != l2.records

    def test_zero_lr_freezes_params_and_stops_on_patience(self, corpus_split):
        """With lr 0 nothing improves after epoch 1, so the loop stops after
        exactly patience further epochs and keeps the earliest best."""
        corpus, split = corpus_split
        cfg = train_cfg(learning_rate=0.0, max_epochs=50, patience=3)
        model, log = train(corpus, split, model_cfg(), cfg)
        assert log.stopped_reason == "patience"
        assert len(log.records) == 4  # epoch 1 best + 3 stale epochs
        assert log.best_epoch == 1
        fresh = init(replace(model_cfg(), dropout=cfg.dropout), cfg.seed)
        for k in model.params:
            np.testing.assert_array_equal(model.params[k].data,
                                          fresh.params[k].data)

    def test_loss_goes_down(self, corpus_split):
        corpus, split = corpus_split
        cfg = train_cfg(learning_rate=1e-2, max_epochs=5)
        _, log = train(corpus, split, model_cfg(), cfg)
        losses = [r["train_loss"] for r in log.records]
        assert losses[-1] < losses[0]
        drops = sum(b < a for a, b in zip(losses, losses[1:]))
        assert drops >= 3

    def test_binary_mode(self, corpus_split):
        corpus, split = corpus_split
        model, log = train(corpus, split, model_cfg(num_class=2),
                           train_cfg(binary=True))
        assert model.config.num_class == 2
        assert len(log.records) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self, corpus_split):
        corpus, split = corpus_split
        cfg = train_cfg(learning_rate=1e308, max_epochs=3)
        with pytest.raises(DivergenceError):
            train(corpus, split, model_cfg(), cfg)


class TestResume:
    def save_trained(self, tmp_path, corpus, split, epochs=3, seed=0):
        cfg = train_cfg(max_epochs=epochs, seed=seed)
        model, log = train(corpus, split, model_cfg(), cfg)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, corpus.vocab, corpus.feature_kind,
                        train_seed=seed, epoch=epochs, val_f1=log.best_val_f1)
        return path, model, log

    def test_completed_run_returns_immediately(self, tmp_path, corpus_split):
        corpus, split = corpus_split
        path, model, _ = self.save_trained(tmp_path, corpus, split, epochs=3)
        back, log = resume(path, corpus, split, train_cfg(max_epochs=3))
        assert log.stopped_reason == "resume_complete"
        assert log.records == []
        assert log.baseline_val_f1 is not None
        for k in model.params:
            np.testing.assert_array_equal(back.params[k].data,
                                          model.params[k].data)

    def test_continues_epoch_numbering(self, tmp_path, corpus_split):
        corpus, split = corpus_split
        path, _, _ = self.save_trained(tmp_path, corpus, split, epochs=3)
        _, log = resume(path, corpus, split, train_cfg(max_epochs=5))
        assert [r["epoch"] for r in log.records] == [4, 5]
        assert log.baseline_val_f1 is not None

    def test_baseline_seeds_best(self, tmp_path, corpus_split):
        """The checkpoint's own validation score is the bar to beat; an
        epoch that merely ties must not displace it."""
        corpus, split = corpus_split
        path, _, _ = self.save_trained(tmp_path, corpus, split, epochs=3)
        _, log = resume(path, corpus, split,
                        train_cfg(max_epochs=5, learning_rate=0.0))
        assert log.best_epoch == 3
        assert log.best_val_f1 == pytest.approx(log.baseline_val_f1)

    def test_arity_mismatch(self, tmp_path, corpus_split):
        corpus, split = corpus_split
        path, _, _ = self.save_trained(tmp_path, corpus, split)
        with pytest.raises(IncompatibleCheckpoint):
            resume(path, corpus, split, train_cfg(binary=True))

    def test_feature_kind_mismatch(self, tmp_path, corpus_split):
        corpus, split = corpus_split
        path, _, _ = self.save_trained(tmp_path, corpus, split)
        other = replace(corpus, feature_kind="waveform")
        with pytest.raises(IncompatibleCheckpoint):
            resume(path, other, split, train_cfg())
