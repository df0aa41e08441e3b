import csv
import os

import numpy as np
import pytest

from semkg.encoder import Encoder, EncoderConfig
from semkg.errors import TrainingError
from semkg.graph import Triple
from semkg.loss import LossConfig, sample_negatives
from semkg.optim import AdamW, OptimizerConfig, clip_grads, global_norm, lr_at
from semkg.text import build_vocab
from semkg.training import (TrainState, batch_loss, load_checkpoint,
                            save_checkpoint, train, train_step,
                            write_loss_history)

from conftest import make_graph


class TestLrSchedule:
    OPT = OptimizerConfig(learning_rate=2e-3, warmup_fraction=0.1)

    def test_step_zero_is_zero(self):
        assert lr_at(self.OPT, 0, 100) == 0.0

    def test_warmup_end_hits_peak_exactly(self):
        assert lr_at(self.OPT, 10, 100) == 2e-3

    def test_terminal_step_is_zero(self):
        assert lr_at(self.OPT, 100, 100) == 0.0

    def test_piecewise_linear(self):
        assert lr_at(self.OPT, 5, 100) == pytest.approx(1e-3)
        assert lr_at(self.OPT, 55, 100) == pytest.approx(1e-3)

    def test_no_warmup_starts_at_peak(self):
        opt = OptimizerConfig(learning_rate=1e-3, warmup_fraction=0.0)
        assert lr_at(opt, 0, 10) == 1e-3

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lr_at(self.OPT, 101, 100)
        with pytest.raises(ValueError):
            lr_at(self.OPT, 0, 0)


class TestAdamW:
    def test_decay_is_scaled_by_learning_rate(self):
        """Decoupled decay: zero lr leaves parameter norms untouched."""
        cfg = OptimizerConfig(learning_rate=1.0, weight_decay=0.5)
        params = {"w": np.ones(4)}
        opt = AdamW(cfg, params)
        opt.apply(params, {"w": np.ones(4)}, lr=0.0)
        np.testing.assert_array_equal(params["w"], np.ones(4))

    def test_decay_shrinks_without_gradient(self):
        cfg = OptimizerConfig(learning_rate=1.0, weight_decay=0.5, epsilon=1e-8)
        params = {"w": np.full(3, 2.0)}
        opt = AdamW(cfg, params)
        opt.apply(params, {"w": np.zeros(3)}, lr=0.1)
        np.testing.assert_allclose(params["w"], 2.0 * (1 - 0.1 * 0.5))

    def test_key_mismatch_rejected(self):
        cfg = OptimizerConfig()
        params = {"w": np.ones(2)}
        opt = AdamW(cfg, params)
        with pytest.raises(ValueError):
            opt.apply(params, {"v": np.ones(2)}, lr=0.1)

    def test_state_round_trip(self):
        cfg = OptimizerConfig()
        params = {"w": np.ones(3)}
        opt = AdamW(cfg, params)
        opt.apply(params, {"w": np.full(3, 0.5)}, lr=1e-3)
        tensors = opt.state_tensors()
        fresh = AdamW(cfg, params)
        fresh.load_state_tensors(tensors)
        assert fresh.step == 1
        np.testing.assert_allclose(fresh.m["w"], opt.m["w"], rtol=1e-6)


class TestClip:
    def test_clip_caps_global_norm_exactly(self):
        grads = {"a": np.full(4, 3.0), "b": np.full(9, 4.0)}
        norm = global_norm(grads)
        assert norm > 5.0
        clipped_norm = clip_grads(grads, 5.0)
        assert clipped_norm == pytest.approx(5.0)
        assert global_norm(grads) == pytest.approx(5.0)

    def test_no_clip_below_threshold(self):
        grads = {"a": np.array([0.3, 0.4])}
        clip_grads(grads, 5.0)
        np.testing.assert_array_equal(grads["a"], [0.3, 0.4])

    def test_none_disables(self):
        grads = {"a": np.full(100, 10.0)}
        clip_grads(grads, None)
        np.testing.assert_array_equal(grads["a"], np.full(100, 10.0))


def tiny_setup(b=1.0, n_ns=2, dropout=0.0, seed=0):
    g = make_graph(["ant hill", "bee hive", "cow barn", "dog house"],
                   ["lives in", "sleeps near", "walks to", "runs at"],
                   [(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 3, 0),
                    (0, 1, 2), (1, 2, 3)])
    tok = build_vocab(g, min_count=1, max_len=12)
    cfg = EncoderConfig(vocab_size=tok.vocab_size, k=8, n_layers=1, n_heads=2,
                        ffn_dim=16, max_len=12, dropout_rate=dropout, seed=seed)
    loss_cfg = LossConfig(b=b, n_ns=n_ns, corrupt_relations=False)
    return g, tok, cfg, loss_cfg


class TestTrainStep:
    def test_zero_lr_leaves_params_increments_step(self):
        g, tok, cfg, loss_cfg = tiny_setup()
        opt = OptimizerConfig(learning_rate=0.0, epochs=1, batch_size=4, seed=0)
        enc = Encoder(cfg)
        before = {k: v.copy() for k, v in enc.params.items()}
        state = TrainState(encoder=enc, optimizer=AdamW(opt, enc.params))
        train_step(state, g, tok, g.train[:4], loss_cfg, opt, 10,
                   np.random.default_rng(0), np.random.default_rng(1))
        assert state.step == 1
        for name in before:
            np.testing.assert_array_equal(enc.params[name], before[name])

    def test_overfits_one_fixed_batch(self):
        """With frozen negatives the loss falls well under 10% of its start.

        The loss cannot reach zero: a positive's score is capped at the
        margin, leaving n_modes * softplus(-b) per positive, so b must be
        large enough for that floor to sit below the 10% line."""
        g, tok, cfg, loss_cfg = tiny_setup(b=3.0)
        opt = OptimizerConfig(learning_rate=2e-2, warmup_fraction=0.1,
                              weight_decay=0.0, epochs=1, batch_size=4, seed=0)
        enc = Encoder(cfg)
        state = TrainState(encoder=enc, optimizer=AdamW(opt, enc.params))
        batch = g.train[:4]
        negatives = [sample_negatives(g, t, loss_cfg, np.random.default_rng(9))
                     for t in batch]
        total = 400
        for _ in range(total):
            train_step(state, g, tok, batch, loss_cfg, opt, total,
                       np.random.default_rng(0), np.random.default_rng(1),
                       negatives=negatives)
        losses = [loss for _, _, loss in state.loss_history]
        warmup_end = int(0.1 * total)
        assert losses[-1] < 0.1 * losses[0]
        assert losses[-1] <= losses[warmup_end]

    def test_determinism_across_runs(self):
        g, tok, cfg, loss_cfg = tiny_setup(dropout=0.2)
        histories = []
        for _ in range(2):
            opt = OptimizerConfig(learning_rate=1e-3, epochs=1, batch_size=3,
                                  seed=0)
            enc = Encoder(cfg)
            state = TrainState(encoder=enc, optimizer=AdamW(opt, enc.params))
            neg_rng = np.random.default_rng(5)
            drop_rng = np.random.default_rng(6)
            for _ in range(5):
                train_step(state, g, tok, g.train[:3], loss_cfg, opt, 5,
                           neg_rng, drop_rng)
            histories.append(state.loss_history)
        assert histories[0] == histories[1]

    def test_non_finite_loss_raises(self):
        g, tok, cfg, loss_cfg = tiny_setup()
        opt = OptimizerConfig(learning_rate=1e-3, epochs=1, batch_size=2, seed=0)
        enc = Encoder(cfg)
        enc.params["tok_emb"][4, 0] = np.inf
        state = TrainState(encoder=enc, optimizer=AdamW(opt, enc.params))
        with pytest.raises(TrainingError, match="step"):
            train_step(state, g, tok, g.train[:2], loss_cfg, opt, 10,
                       np.random.default_rng(0), np.random.default_rng(1))

    def test_empty_batch_rejected(self):
        g, tok, cfg, loss_cfg = tiny_setup()
        opt = OptimizerConfig(epochs=1, batch_size=2, seed=0)
        enc = Encoder(cfg)
        state = TrainState(encoder=enc, optimizer=AdamW(opt, enc.params))
        with pytest.raises(ValueError):
            train_step(state, g, tok, [], loss_cfg, opt, 10,
                       np.random.default_rng(0), np.random.default_rng(1))


class TestEvalLoss:
    def test_batch_loss_is_pure_in_params(self):
        g, tok, cfg, loss_cfg = tiny_setup(dropout=0.3)
        enc = Encoder(cfg)
        negatives = [sample_negatives(g, t, loss_cfg, np.random.default_rng(3))
                     for t in g.train[:3]]
        a = batch_loss(enc, g, tok, g.train[:3], negatives, loss_cfg.b)
        b = batch_loss(enc, g, tok, g.train[:3], negatives, loss_cfg.b)
        assert a == b

    def test_combined_loss_at_zero_scores(self):
        """Fresh params give near-zero residuals, so with b = 0 every score
        is ~0 and the three-mode loss per positive is 3 * (1 + n) * ln 2."""
        g, tok, cfg, _ = tiny_setup()
        loss_cfg = LossConfig(b=0.0, n_ns=2)
        enc = Encoder(cfg)
        for name, arr in enc.params.items():
            if "ln" not in name:
                arr[:] = 0.0
        negatives = [sample_negatives(g, t, loss_cfg, np.random.default_rng(3))
                     for t in g.train[:2]]
        loss = batch_loss(enc, g, tok, g.train[:2], negatives, loss_cfg.b)
        assert loss == pytest.approx(2 * 3 * 3 * np.log(2.0), rel=1e-12)


class TestTrainLoop:
    def test_zero_epochs_writes_only_final_checkpoint(self, tmp_path):
        g, tok, cfg, loss_cfg = tiny_setup()
        opt = OptimizerConfig(epochs=0, batch_size=2, seed=1)
        state = train(g, tok, cfg, loss_cfg, opt, str(tmp_path))
        assert state.step == 0
        names = sorted(os.listdir(tmp_path))
        assert "checkpoint_final.params.bin" in names
        assert not any("epoch" in n for n in names)
        np.testing.assert_array_equal(state.params["tok_emb"],
                                      Encoder(cfg).params["tok_emb"])

    def test_checkpoints_and_history(self, tmp_path):
        g, tok, cfg, loss_cfg = tiny_setup()
        opt = OptimizerConfig(learning_rate=1e-3, epochs=2, batch_size=3, seed=1)
        state = train(g, tok, cfg, loss_cfg, opt, str(tmp_path))
        assert state.step == 4  # ceil(6 / 3) * 2
        names = os.listdir(tmp_path)
        for tag in ("epoch001", "epoch002", "final"):
            assert f"checkpoint_{tag}.params.bin" in names
            assert f"checkpoint_{tag}.opt.bin" in names
            assert f"checkpoint_{tag}.json" in names
        with open(tmp_path / "loss_history.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "lr", "loss"]
        assert len(rows) == 5

    def test_fixed_seed_bitwise_identical_history(self, tmp_path):
        g, tok, cfg, loss_cfg = tiny_setup(dropout=0.1)
        files = []
        for run in ("a", "b"):
            opt = OptimizerConfig(learning_rate=1e-3, epochs=2, batch_size=2,
                                  seed=42)
            train(g, tok, cfg, loss_cfg, opt, str(tmp_path / run))
            files.append((tmp_path / run / "loss_history.csv").read_bytes())
        assert files[0] == files[1]

    def test_checkpoint_round_trip(self, tmp_path):
        g, tok, cfg, loss_cfg = tiny_setup()
        opt = OptimizerConfig(learning_rate=1e-3, epochs=1, batch_size=3, seed=1)
        state = train(g, tok, cfg, loss_cfg, opt, str(tmp_path))
        encoder, manifest = load_checkpoint(str(tmp_path / "checkpoint_final.json"))
        assert manifest["step"] == state.step
        assert encoder.cfg == cfg
        np.testing.assert_allclose(encoder.params["tok_emb"],
                                   state.params["tok_emb"], atol=1e-6)

    def test_empty_train_split_rejected(self, tmp_path):
        g, tok, cfg, loss_cfg = tiny_setup()
        g.train.clear()
        with pytest.raises(ValueError):
            train(g, tok, cfg, loss_cfg, OptimizerConfig(epochs=1, seed=0),
                  str(tmp_path))


def test_loss_history_csv_format(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_history(str(path), [(1, 0.5, 2.25), (2, 0.25, 1.125)])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["step", "lr", "loss"], ["1", "0.5", "2.25"],
                    ["2", "0.25", "1.125"]]


def test_save_checkpoint_manifest_extra(tmp_path):
    g, tok, cfg, loss_cfg = tiny_setup()
    enc = Encoder(cfg)
    manifest_path = save_checkpoint(str(tmp_path), "final", enc, None, 0, 0,
                                    {"vocab_file": "vocab.txt"})
    _, manifest = load_checkpoint(manifest_path)
    assert manifest["vocab_file"] == "vocab.txt"
    assert manifest["model"] == "lass"
