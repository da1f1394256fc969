"""Config-driven experiment runner: single runs, multi-seed runs, sweeps.

A run is: load -> standardize -> (stratified subset) -> train every layer ->
score the train and test splits -> one MetricsRecord per seed, persisted
incrementally so partial sweeps are recoverable. Completed (config-hash,
seed) pairs found in the output file are not re-run.

Config files are flat ``key = value`` text (TOML-style scalars and one-line
lists); any CLI flag overrides its file key.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (DataError, Dataset, load_idx, standardize, stratified_subset,
                   synthetic_two_gaussians)
from .goodness import GOODNESS_KINDS, GoodnessSpec
from .inference import accuracy, score_all_classes
from .records import MetricsRecord, config_hash
from .rng import stream
from .training import TrainConfig, train_network

SWEEP_AXES = ("none", "k_fraction", "alpha", "moment_p")

_SWEEP_KIND_REQUIREMENTS = {
    "k_fraction": ("topk", "contrast_topk", "ln_topk"),
    "alpha": ("entmax_energy",),
    "moment_p": ("moment_p",),
}

CSV_COLUMNS = ("config_hash", "seed", "sweep_axis", "sweep_value", "train_accuracy",
               "test_accuracy", "wall_clock_seconds", "layer_final_losses",
               "layer_loss_traces")


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Everything a run needs: data selection, training setup, output routing."""

    # data
    dataset: str = "synthetic"
    data_root: str = "data"
    subset_train: int | None = None
    subset_test: int | None = None
    per_pixel_standardize: bool = False
    synthetic_n_per_class: int = 500
    synthetic_dim: int = 16
    synthetic_separation: float = 6.0
    # architecture / objective
    layer_widths: list = field(default_factory=lambda: [500, 500])
    activation: str = "relu"
    goodness: str = "sos"
    k_fraction: float | None = None
    k: int | None = None
    alpha: float = 1.5
    moment_p: int = 4
    temperature: float = 1.0
    margin_lambda: float = 0.5
    epsilon: float = 1e-8
    entmax_straight_through: bool = False
    pathway: str = "std"
    norm_gate: bool = False
    threshold: float = 2.0
    label_scale: float = 5.0
    lr: float = 1e-3
    batch_size: int = 500
    epochs: int = 60
    num_classes: int | None = None
    use_bias: bool = True
    interleaved: bool = False
    skip_first_layer_score: bool = False
    # run control
    seeds: list = field(default_factory=lambda: [42])
    out: str | None = None
    format: str = "csv"
    sweep_axis: str = "none"
    sweep_values: list = field(default_factory=list)

    def goodness_spec(self) -> GoodnessSpec:
        return GoodnessSpec(
            kind=self.goodness, k_fraction=self.k_fraction, k=self.k,
            alpha=self.alpha, p=self.moment_p, temperature=self.temperature,
            margin_lambda=self.margin_lambda, epsilon=self.epsilon,
            entmax_straight_through=self.entmax_straight_through,
        )

    def train_config(self, seed: int, num_classes: int) -> TrainConfig:
        return TrainConfig(
            layer_widths=list(self.layer_widths), activation=self.activation,
            goodness=self.goodness_spec(), pathway=self.pathway,
            norm_gate=self.norm_gate, threshold=self.threshold,
            label_scale=self.label_scale, lr=self.lr, batch_size=self.batch_size,
            epochs=self.epochs, seed=seed, num_classes=num_classes,
            use_bias=self.use_bias, interleaved=self.interleaved,
            skip_first_layer_score=self.skip_first_layer_score,
        )

    def semantics(self) -> dict:
        """Hash basis: every field that changes the result; paths and output
        routing excluded."""
        d = dataclasses.asdict(self)
        for key in ("data_root", "out", "format", "seeds", "sweep_axis", "sweep_values"):
            d.pop(key)
        return d

    def hash(self) -> str:
        return config_hash(self.semantics())


def validate_config(cfg: ExperimentConfig) -> None:
    """All cheap validation, run before any training starts."""
    try:
        cfg.goodness_spec()
        cfg.train_config(seed=0, num_classes=cfg.num_classes or 10)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg.goodness not in GOODNESS_KINDS:
        raise ConfigError(f"unknown goodness key {cfg.goodness!r}")
    if cfg.format not in ("csv", "jsonl"):
        raise ConfigError(f"format must be csv or jsonl, got {cfg.format!r}")
    if cfg.sweep_axis not in SWEEP_AXES:
        raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if cfg.sweep_axis != "none":
        required = _SWEEP_KIND_REQUIREMENTS[cfg.sweep_axis]
        if cfg.goodness not in required:
            raise ConfigError(f"sweep axis {cfg.sweep_axis!r} needs goodness in {required}, "
                              f"got {cfg.goodness!r}")
        if not cfg.sweep_values:
            raise ConfigError("sweep_values must be non-empty when sweeping")
        for v in cfg.sweep_values:
            if cfg.sweep_axis == "k_fraction" and not 0 < v <= 1:
                raise ConfigError(f"k_fraction sweep value {v} outside (0, 1]")
            if cfg.sweep_axis == "alpha" and not 1 <= v <= 2:
                raise ConfigError(f"alpha sweep value {v} outside [1, 2]")
            if cfg.sweep_axis == "moment_p" and (int(v) != v or not 2 <= v <= 8):
                raise ConfigError(f"moment_p sweep value {v} outside {{2,...,8}}")


# ---------------------------------------------------------------------------
# flat key = value config files
# ---------------------------------------------------------------------------

def _parse_scalar(text: str):
    text = text.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        value = value.strip()
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            out[key.strip()] = [] if not inner else [_parse_scalar(v) for v in inner.split(",")]
        else:
            out[key.strip()] = _parse_scalar(value)
    return out


def load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        return parse_config_text(f.read())


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge config-file keys with CLI overrides (overrides win) and validate."""
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(**merged)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# dataset resolution
# ---------------------------------------------------------------------------

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}


def resolve_idx_pair(data_root: str, dataset: str, split: str):
    """Locate <root>/<dataset>/{train,t10k}-{images,labels}-idx?-ubyte[.gz]."""
    prefix = _SPLIT_PREFIX[split]
    base = os.path.join(data_root, dataset)
    found = {}
    for role, ndim in (("images", 3), ("labels", 1)):
        candidates = [os.path.join(base, f"{prefix}-{role}-idx{ndim}-ubyte{ext}")
                      for ext in ("", ".gz")]
        # some mirrors ship e.g. train-images.idx3-ubyte
        candidates += [os.path.join(base, f"{prefix}-{role}.idx{ndim}-ubyte{ext}")
                       for ext in ("", ".gz")]
        hit = next((c for c in candidates if os.path.exists(c)), None)
        if hit is None:
            raise DataError(f"no {split} {role} file for dataset {dataset!r} under {base} "
                            f"(tried {prefix}-{role}-idx{ndim}-ubyte[.gz])")
        found[role] = hit
    return found["images"], found["labels"]


def load_dataset_pair(cfg: ExperimentConfig, seed: int):
    """Standardized (train, test) datasets for one seed, subsets applied."""
    if cfg.dataset == "synthetic":
        train = synthetic_two_gaussians(cfg.synthetic_n_per_class, cfg.synthetic_dim,
                                        cfg.synthetic_separation,
                                        stream(seed, "synthetic", (0,)), split="train")
        test = synthetic_two_gaussians(max(cfg.synthetic_n_per_class // 2, 1),
                                       cfg.synthetic_dim, cfg.synthetic_separation,
                                       stream(seed, "synthetic", (1,)), split="test")
        raw_train = train
    else:
        img, lab = resolve_idx_pair(cfg.data_root, cfg.dataset, "train")
        raw_train = load_idx(img, lab, split="train")
        img, lab = resolve_idx_pair(cfg.data_root, cfg.dataset, "test")
        test = load_idx(img, lab, split="test", num_classes=raw_train.num_classes)
        train = raw_train
    train = standardize(train, stats_from=raw_train, per_pixel=cfg.per_pixel_standardize)
    test = standardize(test, stats_from=raw_train, per_pixel=cfg.per_pixel_standardize)
    if cfg.subset_train is not None and cfg.subset_train < train.n:
        train = stratified_subset(train, cfg.subset_train, stream(seed, "subset", (0,)))
    if cfg.subset_test is not None and cfg.subset_test < test.n:
        test = stratified_subset(test, cfg.subset_test, stream(seed, "subset", (1,)))
    return train, test


# ---------------------------------------------------------------------------
# metrics persistence
# ---------------------------------------------------------------------------

def _record_to_row(r: MetricsRecord) -> list:
    def opt(x):
        return "" if x is None else repr(float(x))
    return [r.config_hash, str(r.seed), r.sweep_axis, opt(r.sweep_value),
            opt(r.train_accuracy), opt(r.test_accuracy), opt(r.wall_clock_seconds),
            ";".join(repr(float(v)) for v in r.layer_final_losses),
            json.dumps(r.layer_loss_traces)]


def _row_to_record(row: dict) -> MetricsRecord:
    def opt(text):
        return None if text == "" else float(text)
    finals = [float(v) for v in row["layer_final_losses"].split(";")] \
        if row["layer_final_losses"] else []
    return MetricsRecord(
        config_hash=row["config_hash"], seed=int(row["seed"]),
        sweep_axis=row["sweep_axis"], sweep_value=opt(row["sweep_value"]),
        train_accuracy=opt(row["train_accuracy"]), test_accuracy=opt(row["test_accuracy"]),
        wall_clock_seconds=opt(row["wall_clock_seconds"]),
        layer_final_losses=finals,
        layer_loss_traces=json.loads(row["layer_loss_traces"]),
    )


def write_metrics(records: list, path, fmt: str = "csv") -> None:
    """Write all records to path; CSV carries the fixed documented header."""
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for r in records:
                writer.writerow(_record_to_row(r))
    elif fmt == "jsonl":
        with open(path, "w") as f:
            for r in records:
                f.write(json.dumps(r.to_dict()) + "\n")
    else:
        raise ConfigError(f"unknown metrics format {fmt!r}")


def read_metrics(path, fmt: str = "csv") -> list:
    if fmt == "csv":
        with open(path, newline="") as f:
            return [_row_to_record(row) for row in csv.DictReader(f)]
    if fmt == "jsonl":
        with open(path) as f:
            return [MetricsRecord.from_dict(json.loads(line)) for line in f if line.strip()]
    raise ConfigError(f"unknown metrics format {fmt!r}")


def _append_record(record: MetricsRecord, path, fmt: str) -> None:
    if fmt == "csv":
        new_file = not os.path.exists(path)
        with open(path, "a", newline="") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(CSV_COLUMNS)
            writer.writerow(_record_to_row(record))
    else:
        with open(path, "a") as f:
            f.write(json.dumps(record.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

def run_single(cfg: ExperimentConfig, seed: int) -> MetricsRecord:
    """One seed end to end; the record carries the experiment-level hash."""
    started = time.perf_counter()
    train, test = load_dataset_pair(cfg, seed)
    tcfg = cfg.train_config(seed, cfg.num_classes or train.num_classes)
    net, record = train_network(tcfg, train)
    record.config_hash = cfg.hash()
    record.train_accuracy = accuracy(score_all_classes(net, train.features), train.labels)
    record.test_accuracy = accuracy(score_all_classes(net, test.features), test.labels)
    record.wall_clock_seconds = time.perf_counter() - started
    if cfg.sweep_axis != "none":
        record.sweep_axis = cfg.sweep_axis
        record.sweep_value = float(getattr(cfg, cfg.sweep_axis))
    return record


def run_experiment(cfg: ExperimentConfig) -> list:
    """One record per configured seed; finished (hash, seed) pairs are reused."""
    validate_config(cfg)
    done = {}
    if cfg.out and os.path.exists(cfg.out):
        for r in read_metrics(cfg.out, cfg.format):
            done[(r.config_hash, r.seed)] = r
    records = []
    h = cfg.hash()
    for seed in cfg.seeds:
        if (h, seed) in done:
            records.append(done[(h, seed)])
            continue
        record = run_single(cfg, seed)
        if cfg.out:
            _append_record(record, cfg.out, cfg.format)
        records.append(record)
    return records


def run_sweep(cfg: ExperimentConfig) -> list:
    """Full run_experiment per sweep value, everything else held fixed.

    Output is ordered by ascending sweep value.
    """
    validate_config(cfg)
    if cfg.sweep_axis == "none":
        raise ConfigError("run_sweep needs a sweep axis")
    records = []
    for value in sorted(cfg.sweep_values):
        if cfg.sweep_axis == "moment_p":
            point = dataclasses.replace(cfg, moment_p=int(value))
        else:
            point = dataclasses.replace(cfg, **{cfg.sweep_axis: float(value)})
        records.extend(run_experiment(point))
    return records
