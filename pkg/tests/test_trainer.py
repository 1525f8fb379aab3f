"""Optimizer, clipping, schedule, batching and the training loop"""

import json
import math
import os

import numpy as np
import pytest

from corpus import load_lm_corpus
from errors import CorpusError, NumericalError
from lm_model import PRPNLanguageModel
from run_config import ExperimentConfig
from tensor_core import Tensor, backward, recording
from trainer import (
    AdamOptimizer,
    PlateauSchedule,
    Prefetcher,
    Trainer,
    batchify,
    clip_gradients,
    evaluate_stream,
    nll_to_metric,
    sentence_batches,
    stream_windows,
)


def weight(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, dtype=np.float64)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        w = weight([0.0, 0.0])
        AdamOptimizer({"w": w}, lr=0.003, weight_decay=0.0).step({"w": np.ones(2)})
        np.testing.assert_allclose(w.data, [-0.003, -0.003], rtol=1e-6)

    def test_zero_beta1_keeps_raw_gradient(self):
        w = weight([1.0])
        opt = AdamOptimizer({"w": w}, beta1=0.0)
        for grad in (0.5, -2.0, 3.0):
            opt.step({"w": np.array([grad])})
            np.testing.assert_array_equal(opt.m["w"], [grad])

    def test_zero_gradient_leaves_parameters(self):
        w = weight([1.0, -2.0])
        AdamOptimizer({"w": w}, weight_decay=0.0).step({"w": np.zeros(2)})
        np.testing.assert_array_equal(w.data, [1.0, -2.0])

    def test_weight_decay_shrinks(self):
        w = weight([1.0])
        AdamOptimizer({"w": w}, lr=0.1, weight_decay=0.5).step({"w": np.zeros(1)})
        np.testing.assert_allclose(w.data, [0.95])

    def test_non_finite_gradient_aborts_step(self):
        w = weight([1.0])
        opt = AdamOptimizer({"w": w})
        with pytest.raises(NumericalError):
            opt.step({"w": np.array([np.nan])})
        assert opt.step_count == 0
        np.testing.assert_array_equal(w.data, [1.0])

    def test_moments_round_trip(self):
        w = weight([1.0, 2.0])
        opt = AdamOptimizer({"w": w})
        opt.step({"w": np.array([0.1, 0.2])})
        other = AdamOptimizer({"w": weight([1.0, 2.0])})
        other.load_state(opt.state_dict(), opt.moment_tensors())
        np.testing.assert_array_equal(other.m["w"], opt.m["w"])
        assert other.step_count == 1

    def test_step_descends_quadratic_bowl(self):
        w = weight([3.0, -2.0, 0.5])
        before = float(np.sum(w.data ** 2))
        AdamOptimizer({"w": w}, lr=0.1).step({"w": 2.0 * w.data})
        assert float(np.sum(w.data ** 2)) < before


class TestClipping:
    def test_scales_large_norm(self):
        clipped, norm = clip_gradients([np.array([1.2, 1.6])], 1.0)
        assert norm == pytest.approx(2.0)
        np.testing.assert_allclose(clipped[0], [0.6, 0.8])

    def test_small_norm_unchanged(self):
        clipped, norm = clip_gradients([np.array([0.3]), np.array([0.0])], 1.0)
        assert norm == pytest.approx(0.3)
        np.testing.assert_array_equal(clipped[0], [0.3])

    def test_clipping_twice_changes_nothing(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            grads = [rng.normal(scale=rng.uniform(0.1, 10.0), size=shape) for shape in [(3, 4), (5,), (2, 2)]]
            once, _ = clip_gradients(grads, 1.0)
            twice, norm = clip_gradients(once, 1.0)
            assert norm <= 1.0 + 1e-7
            for a, b in zip(once, twice):
                np.testing.assert_allclose(b, a, rtol=1e-12)


class TestPlateauSchedule:
    def test_decays_after_two_bad_epochs(self):
        schedule = PlateauSchedule(lr=0.003, factor=0.1, patience=2)
        assert schedule.observe(1.5)
        assert not schedule.observe(1.6)
        assert schedule.lr == 0.003
        assert not schedule.observe(1.5)
        assert schedule.lr == pytest.approx(0.0003)

    def test_improvement_resets_counter(self):
        schedule = PlateauSchedule(lr=1.0, patience=2)
        schedule.observe(2.0)
        schedule.observe(2.5)
        schedule.observe(1.0)
        schedule.observe(1.5)
        assert schedule.lr == 1.0

    def test_state_round_trip(self):
        schedule = PlateauSchedule(lr=0.5)
        restored = PlateauSchedule.from_state(json.loads(json.dumps(schedule.state_dict())))
        assert restored.best == math.inf
        assert restored.lr == 0.5


class TestBatching:
    def test_batchify_drops_remainder(self):
        streams = batchify(np.arange(10), 3)
        np.testing.assert_array_equal(streams, [[0, 1, 2], [3, 4, 5], [6, 7, 8]])

    def test_batchify_too_small(self):
        with pytest.raises(CorpusError):
            batchify(np.arange(5), 4)

    def test_windows_shift_targets(self):
        streams = np.arange(14).reshape(2, 7)
        windows = list(stream_windows(streams, 4))
        assert [w[0].shape for w in windows] == [(2, 4), (2, 2)]
        np.testing.assert_array_equal(windows[1][1], [[5, 6], [12, 13]])

    def test_sentence_batches_pad_and_mask(self):
        batches = list(sentence_batches([[5, 6, 7], [8, 9], [4]], batch_size=2))
        assert len(batches) == 1
        inputs, targets, mask = batches[0]
        np.testing.assert_array_equal(inputs, [[5, 6], [8, 0]])
        np.testing.assert_array_equal(targets, [[6, 7], [9, 0]])
        np.testing.assert_array_equal(mask, [[1.0, 1.0], [1.0, 0.0]])

    def test_sentence_batches_need_two_tokens(self):
        with pytest.raises(CorpusError):
            list(sentence_batches([[1], [2]], batch_size=2))

    def test_prefetcher_preserves_order(self):
        with Prefetcher(iter(range(20)), depth=2) as items:
            assert list(items) == list(range(20))

    def test_prefetcher_reraises(self):
        def broken():
            yield 1
            raise CorpusError("bad batch")

        with Prefetcher(broken(), depth=1) as items:
            with pytest.raises(CorpusError):
                list(items)


class TestMetrics:
    def test_bpc_and_ppl(self):
        assert nll_to_metric(math.log(2.0), "char") == pytest.approx(1.0)
        assert nll_to_metric(math.log(50.0), "word") == pytest.approx(50.0)

    def test_worker_count_does_not_change_result(self):
        config = ExperimentConfig.model_validate(
            {"model": {"embedding_size": 4, "hidden_size": 6, "look_back": 2, "memory_span": 3,
                       "precision": "float64", "residual_blocks": 0}}
        )
        model = PRPNLanguageModel(config.model, vocab_size=5)
        ids = np.random.default_rng(0).integers(0, 5, size=120)
        single = evaluate_stream(model, ids, batch_size=4, bptt=7, workers=1)
        sharded = evaluate_stream(model, ids, batch_size=4, bptt=7, workers=3)
        assert single == pytest.approx(sharded, rel=1e-10)


def desk_config(tmp_path, write_text, epochs):
    text = "the quick brown fox jumps over the lazy dog\n" * 6
    config = ExperimentConfig.model_validate({
        "name": "tiny",
        "seed": 3,
        "model": {"embedding_size": 6, "hidden_size": 8, "look_back": 2, "memory_span": 4,
                  "residual_blocks": 0, "dropout": [0.1, 0.1, 0.1]},
        "trainer": {"batch_size": 2, "bptt": 12, "eval_batch_size": 2, "epochs": epochs, "log_interval": 3},
        "data": {"train": write_text("train.txt", text), "valid": write_text("valid.txt", text[:90])},
    })
    train, vocab = load_lm_corpus(config.data.train, "char")
    vocab.freeze()
    valid, _ = load_lm_corpus(config.data.valid, "char", vocab)
    return config, train, valid, vocab


def make_trainer(config, train, valid, vocab, output_dir):
    model = PRPNLanguageModel(config.model, vocab_size=len(vocab), seed=config.seed)
    return Trainer(config, model, vocab, train, valid, output_dir, workers=1)


def read_log(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f]


class TestTrainer:
    def test_epoch_writes_log_and_checkpoints(self, tmp_path, write_text):
        config, train, valid, vocab = desk_config(tmp_path, write_text, epochs=2)
        result = make_trainer(config, train, valid, vocab, str(tmp_path / "run")).train()
        assert result.epochs == 2
        assert os.path.exists(result.best_checkpoint)
        assert os.path.exists(result.last_checkpoint)
        records = read_log(result.metric_log)
        valid_records = [r for r in records if r["split"] == "valid" and r["metric_name"] == "bpc"]
        assert [r["epoch"] for r in valid_records] == [1, 2]
        assert result.best_metric == min(r["value"] for r in valid_records)
        assert any(r["split"] == "train" for r in records)

    def test_resume_matches_uninterrupted_run(self, tmp_path, write_text):
        config, train, valid, vocab = desk_config(tmp_path, write_text, epochs=3)
        full = make_trainer(config, train, valid, vocab, str(tmp_path / "full")).train()

        short_config = config.model_copy(update={"trainer": config.trainer.model_copy(update={"epochs": 2})})
        resumed_dir = str(tmp_path / "resumed")
        make_trainer(short_config, train, valid, vocab, resumed_dir).train()
        trainer = make_trainer(config, train, valid, vocab, resumed_dir)
        trainer.resume(os.path.join(resumed_dir, "last.ckpt"))
        resumed = trainer.train()

        assert read_log(resumed.metric_log) == read_log(full.metric_log)
        assert resumed.best_metric == full.best_metric

    def test_max_steps_stops_early(self, tmp_path, write_text):
        config, train, valid, vocab = desk_config(tmp_path, write_text, epochs=5)
        config = config.model_copy(update={"trainer": config.trainer.model_copy(update={"max_steps": 2})})
        result = make_trainer(config, train, valid, vocab, str(tmp_path / "run")).train()
        assert result.steps == 2
        assert result.epochs == 1

    def test_best_record_is_running_minimum(self, tmp_path, write_text):
        config, train, valid, vocab = desk_config(tmp_path, write_text, epochs=3)
        result = make_trainer(config, train, valid, vocab, str(tmp_path / "run")).train()
        records = read_log(result.metric_log)
        values = [r["value"] for r in records if r["metric_name"] == "bpc"]
        best = [r["value"] for r in records if r["metric_name"] == "best_bpc"]
        assert best == list(np.minimum.accumulate(values))
        assert all(later <= earlier for earlier, later in zip(best, best[1:]))

    def test_same_seed_gives_identical_metric_log(self, tmp_path, write_text):
        config, train, valid, vocab = desk_config(tmp_path, write_text, epochs=2)
        logs = []
        for name in ("first", "second"):
            result = make_trainer(config, train, valid, vocab, str(tmp_path / name)).train()
            with open(result.metric_log, "rb") as f:
                logs.append(f.read())
        assert logs[0] and logs[0] == logs[1]


class TestFitting:
    def test_repeated_string_loss_halves(self):
        config = ExperimentConfig.model_validate({
            "model": {"embedding_size": 8, "hidden_size": 16, "look_back": 2, "memory_span": 4,
                      "residual_blocks": 0, "dropout": [0.0, 0.0, 0.0], "precision": "float64"},
        })
        model = PRPNLanguageModel(config.model, vocab_size=4, seed=1)
        ids = np.tile(np.arange(4), 9)[None, :].repeat(2, axis=0)
        inputs, targets = ids[:, :-1], ids[:, 1:]
        params = model.named_parameters()
        names = list(params)
        optimizer = AdamOptimizer(params, lr=0.02, weight_decay=0.0)

        losses = []
        for _ in range(50):
            model.zero_grad()
            with recording():
                result = model.forward(inputs, targets, train=True)
                backward(result.loss)
            losses.append(result.loss.item())
            grads, _ = clip_gradients([params[name].grad for name in names], 1.0)
            optimizer.step(dict(zip(names, grads)))

        final = model.forward(inputs, targets).loss.item()
        assert final <= 0.5 * losses[0]
