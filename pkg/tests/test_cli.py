import csv
import os

import pytest
import yaml
from click.testing import CliRunner

from semkg.cli import main
from semkg.config import ConfigError, load_run_config
from semkg.loss import LossConfig
from semkg.optim import OptimizerConfig
from semkg.synthetic import write_dataset


@pytest.fixture
def runner():
    return CliRunner()


def write_config(path, data_dir, out_dir, model="transe", **overrides):
    cfg = {
        "schema_version": 1,
        "seed": 77,
        "data_dir": str(data_dir),
        "output_dir": str(out_dir),
        "model": model,
        "tokenizer": {"min_count": 1},
        "encoder": {"k": 8, "n_layers": 1, "n_heads": 2, "ffn_dim": 16,
                    "max_len": 16, "dropout_rate": 0.0},
        "loss": {"b": 2.0, "n_ns": 2, "corrupt_relations": False},
        "optimizer": {"learning_rate": 1e-2, "epochs": 2, "batch_size": 4},
        "shallow": {"k": 8},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh)
    return str(path)


@pytest.fixture
def labeled_dataset(tmp_path):
    """Separable labeled dataset: 'near' pairs are true, others false."""
    entities = [(f"n{i}", f"node {i} group {i % 2}") for i in range(8)]
    relations = [("near", "near to"), ("far", "far from")]
    train = [(f"n{i}", "near", f"n{(i + 2) % 8}") for i in range(8)]
    valid = [("n0", "near", "n4"), ("n1", "near", "n3"),
             ("n0", "far", "n1"), ("n2", "far", "n3")]
    test = [("n2", "near", "n6"), ("n3", "near", "n5"),
            ("n4", "far", "n5"), ("n6", "far", "n7")]
    out = tmp_path / "labeled"
    write_dataset(str(out), entities, relations, train, valid, test,
                  valid_labels=[True, True, False, False],
                  test_labels=[True, True, False, False])
    return str(out)


class TestConfig:
    def test_paper_defaults(self):
        assert LossConfig() == LossConfig(b=7.0, n_ns=5, corrupt_heads=True,
                                          corrupt_relations=True,
                                          corrupt_tails=True)
        opt = OptimizerConfig()
        assert opt.batch_size == 128
        assert opt.learning_rate == 3e-5
        assert opt.weight_decay == 0.01
        assert opt.epochs == 5
        assert 0.0 <= opt.warmup_fraction < 1.0

    def test_missing_data_dir_names_field(self, tmp_path):
        path = write_config(tmp_path / "c.yaml", tmp_path / "nowhere",
                            tmp_path / "out")
        with pytest.raises(ConfigError, match="data_dir"):
            load_run_config(path)

    def test_unknown_model_rejected(self, tmp_path, tiny_dataset_dir):
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "out", model="cnn")
        with pytest.raises(ConfigError, match="model"):
            load_run_config(path)

    def test_schema_version_required(self, tmp_path, tiny_dataset_dir):
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "out", schema_version=99)
        with pytest.raises(ConfigError, match="schema_version"):
            load_run_config(path)

    def test_module_seeds_split_deterministically(self, tmp_path,
                                                  tiny_dataset_dir):
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "out")
        a = load_run_config(path).module_seeds()
        b = load_run_config(path).module_seeds()
        assert a == b
        assert len(set(a.values())) == len(a)

    def test_env_threads_honored(self, tmp_path, tiny_dataset_dir,
                                 monkeypatch):
        monkeypatch.setenv("SEMKG_THREADS", "3")
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "out")
        assert load_run_config(path).threads == 3


class TestTrainCommand:
    def test_missing_data_dir_exits_2(self, runner, tmp_path):
        path = write_config(tmp_path / "c.yaml", tmp_path / "nowhere",
                            tmp_path / "out")
        result = runner.invoke(main, ["train", "--config", path])
        assert result.exit_code == 2
        assert "data_dir" in result.output

    def test_zero_epochs_writes_final_checkpoint(self, runner, tmp_path,
                                                 tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out,
                            optimizer={"epochs": 0})
        result = runner.invoke(main, ["train", "--config", path])
        assert result.exit_code == 0, result.output
        assert (out / "checkpoint_final.params.bin").exists()

    def test_shallow_training_outputs(self, runner, tmp_path,
                                      tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        result = runner.invoke(main, ["train", "--config", path])
        assert result.exit_code == 0, result.output
        for name in ("checkpoint_final.params.bin", "checkpoint_final.json",
                     "loss_history.csv", "loss_curve.png"):
            assert (out / name).exists(), name

    def test_lass_training_outputs(self, runner, tmp_path, tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out,
                            model="lass",
                            optimizer={"epochs": 1, "batch_size": 4,
                                       "learning_rate": 1e-3})
        result = runner.invoke(main, ["train", "--config", path])
        assert result.exit_code == 0, result.output
        assert (out / "vocab.txt").exists()
        assert (out / "checkpoint_epoch001.params.bin").exists()
        assert (out / "loss_curve.png").exists()


class TestEvalLp:
    def test_stub_perfect_scorer_prints_mr_one(self, runner, tmp_path,
                                               tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        result = runner.invoke(main, ["eval-lp", "--config", path,
                                      "--stub-scorer", "perfect"])
        assert result.exit_code == 0, result.output
        assert "1.000" in result.output
        assert (out / "ranking.csv").exists()
        assert (out / "rank_histogram.png").exists()

    def test_csv_footer_matches_stdout(self, runner, tmp_path,
                                       tiny_dataset_dir):
        from semkg.evaluation import read_ranking_aggregates
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        result = runner.invoke(main, ["eval-lp", "--config", path,
                                      "--stub-scorer", "perfect"])
        aggregates = read_ranking_aggregates(str(out / "ranking.csv"))
        for key in ("MR", "MRR"):
            printed = [line for line in result.output.splitlines()
                       if line.startswith(key)][0].split()[-1]
            assert float(printed) == pytest.approx(aggregates[key], abs=5e-4)

    def test_requires_checkpoint_without_stub(self, runner, tmp_path,
                                              tiny_dataset_dir):
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "out")
        result = runner.invoke(main, ["eval-lp", "--config", path])
        assert result.exit_code == 2

    def test_trained_checkpoint_round_trip(self, runner, tmp_path,
                                           tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        assert runner.invoke(main, ["train", "--config", path]).exit_code == 0
        result = runner.invoke(main, [
            "eval-lp", "--config", path,
            "--checkpoint", str(out / "checkpoint_final.json")])
        assert result.exit_code == 0, result.output

    def test_model_mismatch_exits_1(self, runner, tmp_path, tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        assert runner.invoke(main, ["train", "--config", path]).exit_code == 0
        other = write_config(tmp_path / "c2.yaml", tiny_dataset_dir, out,
                             model="distmult")
        result = runner.invoke(main, [
            "eval-lp", "--config", other,
            "--checkpoint", str(out / "checkpoint_final.json")])
        assert result.exit_code == 1
        assert "match" in result.output

    def test_rerun_is_byte_identical(self, runner, tmp_path,
                                     tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        runner.invoke(main, ["eval-lp", "--config", path,
                             "--stub-scorer", "perfect"])
        first = (out / "ranking.csv").read_bytes()
        runner.invoke(main, ["eval-lp", "--config", path,
                             "--stub-scorer", "perfect"])
        assert (out / "ranking.csv").read_bytes() == first


class TestEvalTc:
    def _train(self, runner, tmp_path, dataset):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", dataset, out,
                            optimizer={"learning_rate": 5e-2, "epochs": 200,
                                       "batch_size": 8, "weight_decay": 0.0})
        assert runner.invoke(main, ["train", "--config", path]).exit_code == 0
        return path, out

    def test_separable_dataset_reaches_perfect_accuracy(self, runner,
                                                        tmp_path,
                                                        labeled_dataset):
        path, out = self._train(runner, tmp_path, labeled_dataset)
        result = runner.invoke(main, [
            "eval-tc", "--config", path,
            "--checkpoint", str(out / "checkpoint_final.json")])
        assert result.exit_code == 0, result.output
        assert "1.000" in result.output
        assert (out / "classification.csv").exists()
        assert (out / "error_breakdown.png").exists()

    def test_unlabeled_dataset_exits_1(self, runner, tmp_path,
                                       tiny_dataset_dir, labeled_dataset):
        # tiny dataset has labels only on test, not valid
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out)
        assert runner.invoke(main, ["train", "--config", path]).exit_code == 0
        result = runner.invoke(main, [
            "eval-tc", "--config", path,
            "--checkpoint", str(out / "checkpoint_final.json")])
        assert result.exit_code == 1
        assert "label" in result.output

    def test_error_table_sorted_descending(self, runner, tmp_path,
                                           labeled_dataset):
        path, out = self._train(runner, tmp_path, labeled_dataset)
        result = runner.invoke(main, [
            "eval-tc", "--config", path,
            "--checkpoint", str(out / "checkpoint_final.json")])
        with open(out / "classification.csv", newline="") as fh:
            shares = [float(row[2]) for row in csv.reader(fh)
                      if row[0] == "errors"]
        assert shares == sorted(shares, reverse=True)


class TestSweep:
    def test_single_fraction(self, runner, tmp_path, tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out,
                            optimizer={"epochs": 1, "batch_size": 4})
        result = runner.invoke(main, ["sweep", "--config", path,
                                      "--fractions", "1.0"])
        assert result.exit_code == 0, result.output
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 2
        assert rows[1][0] == "1.0"
        assert (out / "sweep.png").exists()

    def test_invalid_fraction_exits_2(self, runner, tmp_path,
                                      tiny_dataset_dir):
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "out")
        result = runner.invoke(main, ["sweep", "--config", path,
                                      "--fractions", "1.5"])
        assert result.exit_code == 2

    def test_default_fractions_are_the_five_standard_points(self, runner,
                                                            tmp_path,
                                                            tiny_dataset_dir):
        from semkg.cli import DEFAULT_FRACTIONS
        assert DEFAULT_FRACTIONS == (0.05, 0.10, 0.15, 0.20, 0.30)

    def test_failed_rows_recorded_but_exit_zero(self, runner, tmp_path,
                                                tiny_dataset_dir):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out,
                            optimizer={"epochs": 1, "batch_size": 4})
        # 1e-7 of 4 triples rounds to zero: that row fails, 1.0 succeeds
        result = runner.invoke(main, ["sweep", "--config", path,
                                      "--fractions", "0.0000001,1.0"])
        assert result.exit_code == 0, result.output
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[1][1] == "" and rows[1][2] != ""
        assert rows[2][1] != ""


class TestSubsample:
    def test_writes_subsampled_dataset(self, runner, tmp_path,
                                       tiny_dataset_dir):
        from semkg.graph import load_graph
        out = tmp_path / "subset"
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir,
                            tmp_path / "o")
        result = runner.invoke(main, ["subsample", "--config", path,
                                      "--fraction", "0.5",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        sub = load_graph(str(out))
        assert len(sub.train) == 2

    def test_invalid_fraction_exits_2(self, runner, tmp_path,
                                      tiny_dataset_dir):
        path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, tmp_path / "o")
        result = runner.invoke(main, ["subsample", "--config", path,
                                      "--fraction", "0", "--out",
                                      str(tmp_path / "s")])
        assert result.exit_code == 2


def test_train_rerun_byte_identical(runner, tmp_path, tiny_dataset_dir):
    out = tmp_path / "out"
    path = write_config(tmp_path / "c.yaml", tiny_dataset_dir, out,
                        model="lass",
                        optimizer={"epochs": 1, "batch_size": 4,
                                   "learning_rate": 1e-3})

    def snapshot():
        assert runner.invoke(main, ["train", "--config", path]).exit_code == 0
        return {name: (out / name).read_bytes()
                for name in os.listdir(out) if not name.endswith(".png")}

    assert snapshot() == snapshot()
