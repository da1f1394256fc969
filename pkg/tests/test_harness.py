import dataclasses
import math
import time

import numpy as np
import pytest

from ffgoodness import cli
from ffgoodness.data import DataError
from ffgoodness.harness import (ConfigError, ExperimentConfig, build_config,
                                load_dataset_pair, parse_config_text, read_metrics,
                                run_experiment, run_sweep, validate_config,
                                write_metrics)
from ffgoodness.records import MetricsRecord


def fast_synthetic_cfg(**overrides):
    base = dict(dataset="synthetic", synthetic_n_per_class=150, synthetic_dim=8,
                synthetic_separation=10.0, layer_widths=[16], epochs=30,
                batch_size=25, seeds=[42], format="csv")
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfigFile:
    def test_parse_scalars_and_lists(self):
        text = """
        # comment
        dataset = "synthetic"
        epochs = 7            # trailing comment
        lr = 0.01
        norm_gate = true
        layer_widths = [32, 16]
        seeds = [0, 1, 2]
        subset_train = none
        """
        values = parse_config_text(text)
        assert values["dataset"] == "synthetic"
        assert values["epochs"] == 7
        assert values["lr"] == 0.01
        assert values["norm_gate"] is True
        assert values["layer_widths"] == [32, 16]
        assert values["seeds"] == [0, 1, 2]
        assert values["subset_train"] is None

    def test_bad_line_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("this is not a key value pair")

    def test_overrides_beat_file_values(self):
        cfg = build_config({"epochs": 5, "dataset": "synthetic"}, {"epochs": 9})
        assert cfg.epochs == 9

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            build_config({"dataset": "synthetic", "learning_rate": 0.1})

    def test_validation_errors_are_config_errors(self):
        with pytest.raises(ConfigError):
            build_config({"goodness": "not_a_goodness"})
        with pytest.raises(ConfigError):
            build_config({"format": "xml"})
        with pytest.raises(ConfigError):
            build_config({"sweep_axis": "alpha", "goodness": "sos",
                          "sweep_values": [1.5]})
        with pytest.raises(ConfigError):
            build_config({"sweep_axis": "moment_p", "goodness": "moment_p",
                          "sweep_values": [9]})
        with pytest.raises(ConfigError):
            build_config({"seeds": []})


class TestConfigHash:
    def test_semantic_change_changes_hash(self):
        base = fast_synthetic_cfg()
        assert base.hash() == fast_synthetic_cfg().hash()
        changed = dataclasses.replace(base, lr=2e-3)
        assert changed.hash() != base.hash()
        changed = dataclasses.replace(base, goodness="burstiness")
        assert changed.hash() != base.hash()
        changed = dataclasses.replace(base, subset_train=100)
        assert changed.hash() != base.hash()

    def test_paths_and_routing_excluded(self):
        base = fast_synthetic_cfg()
        same = dataclasses.replace(base, data_root="/elsewhere", out="other.csv",
                                   format="jsonl", seeds=[1, 2, 3])
        assert same.hash() == base.hash()


class TestMetricsRoundTrip:
    def _records(self):
        return [
            MetricsRecord(config_hash="abc123", seed=42,
                          layer_final_losses=[0.3121, 0.221],
                          layer_loss_traces=[[1.0, 0.3121], [0.9, 0.221]],
                          train_accuracy=0.98765432, test_accuracy=0.87654321,
                          wall_clock_seconds=12.5),
            MetricsRecord(config_hash="def456", seed=0,
                          layer_final_losses=[0.5],
                          layer_loss_traces=[[0.5]],
                          train_accuracy=1.0 / 3.0, test_accuracy=2.0 / 3.0,
                          wall_clock_seconds=0.25, sweep_axis="alpha",
                          sweep_value=1.5),
        ]

    @pytest.mark.parametrize("fmt", ["csv", "jsonl"])
    def test_lossless(self, fmt, tmp_path):
        path = tmp_path / f"metrics.{fmt}"
        records = self._records()
        write_metrics(records, path, fmt)
        loaded = read_metrics(path, fmt)
        assert loaded == records

    def test_empty_csv_has_header(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_metrics([], path, "csv")
        text = path.read_text().strip()
        assert text.startswith("config_hash,seed,")
        assert read_metrics(path, "csv") == []

    def test_accuracy_six_significant_digits(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics(self._records(), path, "csv")
        assert repr(1.0 / 3.0) in path.read_text()  # full repr, >= 6 sig digits


class TestRunExperiment:
    def test_synthetic_end_to_end_under_30s(self, tmp_path):
        cfg = fast_synthetic_cfg(out=str(tmp_path / "m.csv"))
        started = time.perf_counter()
        records = run_experiment(cfg)
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0
        assert len(records) == 1
        r = records[0]
        assert 0.0 <= r.test_accuracy <= 1.0
        assert r.test_accuracy > 0.9  # well separated blobs
        assert r.wall_clock_seconds > 0
        assert len(r.layer_final_losses) == 1

    def test_repeated_seed_is_deterministic(self):
        cfg = fast_synthetic_cfg(seeds=[42, 42])
        a, b = run_experiment(cfg)
        assert a.test_accuracy == b.test_accuracy
        assert a.train_accuracy == b.train_accuracy
        assert a.layer_loss_traces == b.layer_loss_traces

    def test_resume_skips_finished_pairs(self, tmp_path):
        out = tmp_path / "m.csv"
        cfg = fast_synthetic_cfg(out=str(out))
        first = run_experiment(cfg)[0]
        marker = first.wall_clock_seconds
        again = run_experiment(cfg)[0]
        # identical record object data, including the original wall clock
        assert again.wall_clock_seconds == marker
        assert len(read_metrics(out, "csv")) == 1
        # a new seed triggers exactly one more run
        more = run_experiment(dataclasses.replace(cfg, seeds=[42, 7]))
        assert len(more) == 2
        assert len(read_metrics(out, "csv")) == 2

    def test_missing_dataset_fails_before_training(self, tmp_path):
        cfg = fast_synthetic_cfg(dataset="mnist", data_root=str(tmp_path / "nowhere"))
        with pytest.raises(DataError, match="mnist"):
            run_experiment(cfg)

    def test_records_persisted_incrementally(self, tmp_path):
        out = tmp_path / "m.jsonl"
        cfg = fast_synthetic_cfg(out=str(out), format="jsonl", seeds=[1, 2])
        run_experiment(cfg)
        assert len(read_metrics(out, "jsonl")) == 2


class TestRunSweep:
    def test_moment_sweep_ordering_and_values(self, tmp_path):
        cfg = fast_synthetic_cfg(goodness="moment_p", sweep_axis="moment_p",
                                 sweep_values=[4, 2, 3], epochs=2,
                                 out=str(tmp_path / "sweep.csv"))
        records = run_sweep(cfg)
        assert [r.sweep_value for r in records] == [2.0, 3.0, 4.0]
        assert all(r.sweep_axis == "moment_p" for r in records)
        hashes = {r.config_hash for r in records}
        assert len(hashes) == 3  # each point is its own config

    def test_k_fraction_sweep_seven_points(self):
        cfg = fast_synthetic_cfg(goodness="topk", sweep_axis="k_fraction",
                                 sweep_values=[0.0025, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2],
                                 epochs=1, synthetic_n_per_class=60)
        records = run_sweep(cfg)
        assert len(records) == 7

    def test_axis_requires_matching_goodness(self):
        cfg = fast_synthetic_cfg(goodness="sos", sweep_axis="alpha", sweep_values=[1.5])
        with pytest.raises(ConfigError):
            run_sweep(cfg)

    def test_sweep_without_axis_rejected(self):
        with pytest.raises(ConfigError):
            run_sweep(fast_synthetic_cfg())


class TestDatasetResolution:
    def test_synthetic_pair_shapes(self):
        cfg = fast_synthetic_cfg(subset_train=100, subset_test=50)
        train, test = load_dataset_pair(cfg, seed=42)
        assert train.n == 100 and test.n == 50
        assert train.dim == 8
        # standardization happened before subsetting (train stats, full split)
        assert abs(train.features.mean()) < 0.2

    def test_idx_layout_resolution(self, tmp_path):
        from test_data import make_idx_pair  # reuse the writer helper
        root = tmp_path / "data"
        ddir = root / "mnist"
        ddir.mkdir(parents=True)
        rng = np.random.Generator(np.random.PCG64(0))
        for prefix, n in (("train", 40), ("t10k", 20)):
            pixels = rng.integers(0, 256, size=(n, 4), dtype=np.uint8)
            labels = (np.arange(n) % 2).astype(np.uint8)
            from ffgoodness.data import write_idx_images, write_idx_labels
            write_idx_images(ddir / f"{prefix}-images-idx3-ubyte", pixels, 2, 2)
            write_idx_labels(ddir / f"{prefix}-labels-idx1-ubyte", labels)
        cfg = fast_synthetic_cfg(dataset="mnist", data_root=str(root))
        train, test = load_dataset_pair(cfg, seed=0)
        assert train.n == 40 and test.n == 20
        assert train.num_classes == 2


class TestCli:
    def test_train_synthetic(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        code = cli.main(["train", "--dataset", "synthetic", "--seed", "42",
                         "--out", str(out)] + self._fast_flags(tmp_path))
        assert code == 0
        assert out.exists()
        assert "test_acc=" in capsys.readouterr().out

    def _fast_flags(self, tmp_path):
        cfg = tmp_path / "fast.toml"
        cfg.write_text("synthetic_n_per_class = 100\nsynthetic_dim = 8\n"
                       "synthetic_separation = 8.0\nlayer_widths = [16]\n"
                       "epochs = 2\nbatch_size = 50\n")
        return ["--config", str(cfg)]

    def test_config_error_exit_code(self, tmp_path):
        code = cli.main(["train", "--goodness", "bogus"] + self._fast_flags(tmp_path))
        assert code == 2

    def test_data_error_exit_code(self, tmp_path):
        code = cli.main(["train", "--dataset", "mnist", "--data-root",
                         str(tmp_path / "missing")] + self._fast_flags(tmp_path))
        assert code == 3

    def test_sweep_cli(self, tmp_path, capsys):
        out = tmp_path / "sweep.jsonl"
        code = cli.main(["sweep", "--dataset", "synthetic", "--goodness", "moment_p",
                         "--axis", "moment_p", "--values", "2,3", "--format", "jsonl",
                         "--out", str(out)] + self._fast_flags(tmp_path))
        assert code == 0
        assert len(read_metrics(out, "jsonl")) == 2

    def test_train_save_then_eval(self, tmp_path, capsys):
        model = tmp_path / "net.npz"
        flags = self._fast_flags(tmp_path)
        assert cli.main(["train", "--dataset", "synthetic", "--save-model",
                         str(model)] + flags) == 0
        assert model.exists()
        code = cli.main(["eval", "--model", str(model), "--dataset", "synthetic"] + flags)
        assert code == 0
        assert "test_acc=" in capsys.readouterr().out

    def test_eval_missing_model_is_data_error(self, tmp_path):
        code = cli.main(["eval", "--model", str(tmp_path / "no.npz"),
                         "--dataset", "synthetic"] + self._fast_flags(tmp_path))
        assert code == 3

    def test_bad_seed_list_is_config_error(self, tmp_path):
        code = cli.main(["train", "--seed", "4,x"] + self._fast_flags(tmp_path))
        assert code == 2

    def test_selftest_passes(self, capsys):
        assert cli.main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out
