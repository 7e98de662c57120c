"""Splits, Adam, training determinism, checkpoint round-trips."""

import numpy as np
import pytest

from conftest import micro_train_config
from gesturerep import diffcore as dc
from gesturerep import trainer
from gesturerep.diffcore import ContractError, Tensor
from gesturerep.towers import CheckpointFormatError
from gesturerep.trainer import (
    Adam,
    GestureDataset,
    ModelBundle,
    build_config_dict,
    fit,
    load_checkpoint,
    save_checkpoint,
    split_dataset,
)


class TestSplit:
    def test_paper_scale_counts(self):
        train, val = split_dataset(70153, fraction=0.9, seed=0)
        assert (len(train), len(val)) == (63137, 7016)

    def test_small(self):
        train, val = split_dataset(10, fraction=0.9, seed=1)
        assert (len(train), len(val)) == (9, 1)

    def test_deterministic(self):
        a = split_dataset(100, seed=7)
        b = split_dataset(100, seed=7)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_disjoint_exhaustive(self):
        train, val = split_dataset(57, fraction=0.8, seed=3)
        combined = sorted(np.concatenate([train, val]).tolist())
        assert combined == list(range(57))

    def test_too_small_rejected(self):
        with pytest.raises(ContractError):
            split_dataset(1)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # f(theta) = theta^2 at theta=1: g=2, bias-corrected update = lr * g/|g|
        theta = Tensor(np.array(1.0), requires_grad=True)
        opt = Adam({"theta": theta}, lr=0.001)
        dc.backward(dc.mul(theta, theta))
        opt.step()
        expected = 1.0 - 0.001 * (2.0 / (2.0 + 1e-8))
        assert theta.values == pytest.approx(expected, abs=1e-12)

    def test_first_step_magnitude_any_gradient(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=5), requires_grad=True)
        before = x.values.copy()
        opt = Adam({"x": x}, lr=0.001)
        dc.backward(dc.sum_(dc.mul(x, dc.mul(x, x))))
        opt.step()
        assert np.allclose(np.abs(x.values - before), 0.001, atol=1e-9)

    def test_zero_learning_rate_freezes_params(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        before = x.values.copy()
        opt = Adam({"x": x}, lr=0.0)
        dc.backward(dc.sum_(dc.mul(x, x)))
        opt.step()
        assert np.array_equal(x.values, before)


class TestFit:
    def test_zero_epochs_returns_initialization(self, micro_dataset):
        cfg = micro_train_config(max_epochs=0)
        ck = fit(micro_dataset, cfg)
        bundle = ModelBundle.from_config(build_config_dict(cfg, micro_dataset))
        init = bundle.init_params(cfg.seed)
        assert set(ck.params) == set(init)
        for k in init:
            assert np.array_equal(ck.params[k], init[k])
        assert ck.epoch == 0 and ck.train_history == []

    def test_training_decreases_loss(self, micro_dataset):
        cfg = micro_train_config(max_epochs=6, batch_size=16)
        ck = fit(micro_dataset, cfg)
        assert ck.train_history[-1] < ck.train_history[0]

    def test_seeded_determinism_bit_exact(self, micro_dataset):
        cfg = micro_train_config(max_epochs=2)
        a = fit(micro_dataset, cfg)
        b = fit(micro_dataset, cfg)
        assert a.train_history == b.train_history
        assert a.val_history == b.val_history
        assert a.params_digest() == b.params_digest()

    def test_mode_unimodal_runs_without_speech(self, micro_corpus):
        ds = GestureDataset.from_corpus(micro_corpus.root)
        ds.speech = None
        ck = fit(ds, micro_train_config(mode="unimodal", max_epochs=1))
        assert len(ck.train_history) == 1

    def test_multimodal_requires_speech(self, micro_corpus):
        ds = GestureDataset.from_corpus(micro_corpus.root)
        ds.speech = None
        with pytest.raises(ContractError):
            fit(ds, micro_train_config(mode="multimodal", max_epochs=1))

    def test_partial_speech_coverage_rejected(self, micro_corpus):
        ds = GestureDataset.from_corpus(micro_corpus.root)
        ds.speech = dict(ds.speech)
        missing = ds.window_gestures[0]
        del ds.speech[missing]
        with pytest.raises(ContractError, match=missing):
            fit(ds, micro_train_config(mode="combined", max_epochs=1))

    def test_empty_dataset_rejected(self, micro_dataset):
        empty = GestureDataset(np.zeros((0, 3, 25, 27)), [], {}, None, 25)
        with pytest.raises(ContractError):
            fit(empty, micro_train_config())

    def test_nonfinite_loss_aborts_with_diagnostics(self, micro_dataset):
        cfg = micro_train_config()
        config = build_config_dict(cfg, micro_dataset)
        bundle = ModelBundle.from_config(config)
        params_nd = bundle.init_params(cfg.seed)
        params_nd["gesture.fc_w"][0, 0] = np.nan
        params = {k: Tensor(v, requires_grad=True) for k, v in params_nd.items()}
        step = trainer._Step(cfg, bundle, micro_dataset)
        opt = Adam(params, cfg.learning_rate)
        with pytest.raises(trainer.TrainingDivergedError, match="step 0"):
            trainer.train_step(step, params, opt, np.arange(8), 0, 0)

    def test_metrics_log_schema(self, micro_dataset, tmp_path):
        import json

        path = tmp_path / "metrics.jsonl"
        fit(micro_dataset, micro_train_config(max_epochs=2), metrics_path=path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 2
        rec = json.loads(lines[0])
        assert set(rec) == {"epoch", "train_loss", "val_loss", "wall_ms"}


class TestCheckpointIO:
    def test_round_trip_forward_identical(self, micro_dataset, tmp_path):
        cfg = micro_train_config(max_epochs=1)
        ck = fit(micro_dataset, cfg)
        path = tmp_path / "model.gckp"
        save_checkpoint(path, ck)
        loaded = load_checkpoint(path)
        assert loaded.config_hash == ck.config_hash
        assert loaded.params_digest() == ck.params_digest()
        bundle = ModelBundle.from_config(loaded.config)
        x = micro_dataset.normalized()[:4]
        a = bundle.embed_windows(ck.params, x)
        b = bundle.embed_windows(loaded.params, x)
        assert a.tobytes() == b.tobytes()

    def test_truncated_file_rejected(self, micro_dataset, tmp_path):
        ck = fit(micro_dataset, micro_train_config(max_epochs=0))
        path = tmp_path / "model.gckp"
        save_checkpoint(path, ck)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_config_hash_mismatch_warns(self, micro_dataset, tmp_path, caplog):
        import logging

        ck = fit(micro_dataset, micro_train_config(max_epochs=0))
        path = tmp_path / "model.gckp"
        save_checkpoint(path, ck)
        with caplog.at_level(logging.WARNING):
            load_checkpoint(path, expected_config_hash="deadbeef" * 8)
        assert any("config hash" in r.message for r in caplog.records)


class TestDatasetLoading:
    def test_corpus_round_trip_without_warnings(self, micro_corpus, micro_dataset):
        assert micro_dataset.skipped == []
        assert len(micro_dataset) > 0
        assert micro_dataset.windows.shape[1:] == (3, 25, 27)
        assert micro_dataset.speech_dims() == (4, 50, 16)
        assert set(micro_dataset.records) == {r.gesture_id for r in micro_corpus.records}

    def test_normalized_matches_single_window_path(self, micro_dataset):
        from gesturerep.pose import SkeletonWindow, normalize_window

        batch = micro_dataset.normalized()
        for i in (0, len(micro_dataset) - 1):
            w = SkeletonWindow(micro_dataset.windows[i], micro_dataset.fps, "g")
            single = normalize_window(w)
            assert single.data.tobytes() == batch[i].tobytes()
