"""Command-line entry point.

Subcommands: train (single config, multi-seed), sweep (one axis), eval
(saved network against a dataset), selftest (invariant battery).
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .data import DataError
from .harness import (ConfigError, ExperimentConfig, build_config, load_config_file,
                      load_dataset_pair, run_experiment, run_sweep, write_metrics)
from .inference import accuracy, score_all_classes
from .layers import NumericalError
from .records import MetricsRecord
from .selftest import run_selftest
from .training import load_network, save_network, train_network

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", help="seed or comma-separated seed list")
    p.add_argument("--dataset", help="dataset name (mnist, fashion_mnist, synthetic)")
    p.add_argument("--data-root", dest="data_root", help="directory holding <dataset>/ IDX files")
    p.add_argument("--goodness", help="goodness key (sos, topk, burstiness, ...)")
    p.add_argument("--activation", help="relu | gelu | swish | ln_gelu | ln_swish")
    p.add_argument("--pathway", choices=["std", "ffcl"])
    p.add_argument("--norm-gate", dest="norm_gate", choices=["on", "off"])
    p.add_argument("--subset-train", dest="subset_train", type=int)
    p.add_argument("--subset-test", dest="subset_test", type=int)
    p.add_argument("--out", help="metrics output path")
    p.add_argument("--format", choices=["csv", "jsonl"])


def _overrides_from_args(args) -> dict:
    out = {}
    for key in ("dataset", "data_root", "goodness", "activation", "pathway",
                "subset_train", "subset_test", "out", "format"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    if getattr(args, "norm_gate", None) is not None:
        out["norm_gate"] = args.norm_gate == "on"
    if getattr(args, "seed", None) is not None:
        try:
            out["seeds"] = [int(s) for s in str(args.seed).split(",") if s != ""]
        except ValueError:
            raise ConfigError(f"bad --seed value {args.seed!r}") from None
    return out


def _build_cfg(args, extra: dict | None = None) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = _overrides_from_args(args)
    overrides.update(extra or {})
    return build_config(file_values, overrides)


def _print_records(records) -> None:
    for r in records:
        sweep = f" {r.sweep_axis}={r.sweep_value}" if r.sweep_axis != "none" else ""
        print(f"seed={r.seed}{sweep} train_acc={r.train_accuracy:.4f} "
              f"test_acc={r.test_accuracy:.4f} wall={r.wall_clock_seconds:.1f}s")


def cmd_train(args) -> int:
    cfg = _build_cfg(args)
    if args.save_model:
        # train once here so the network object is in hand for saving
        train, _ = load_dataset_pair(cfg, cfg.seeds[0])
        tcfg = cfg.train_config(cfg.seeds[0], cfg.num_classes or train.num_classes)
        net, _ = train_network(tcfg, train)
        save_network(net, args.save_model)
        print(f"saved network to {args.save_model}")
    records = run_experiment(cfg)
    _print_records(records)
    if cfg.out:
        print(f"metrics written to {cfg.out} ({cfg.format})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    extra = {}
    if args.axis:
        extra["sweep_axis"] = args.axis
    if args.values:
        try:
            extra["sweep_values"] = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError(f"bad --values list {args.values!r}") from None
    cfg = _build_cfg(args, extra)
    if cfg.sweep_axis == "none":
        raise ConfigError("sweep needs --axis (or sweep_axis in the config file)")
    records = run_sweep(cfg)
    _print_records(records)
    if cfg.out:
        print(f"metrics written to {cfg.out} ({cfg.format})")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_network(args.model)
    cfg = _build_cfg(args, {"epochs": 0})
    _, test = load_dataset_pair(cfg, cfg.seeds[0])
    table = score_all_classes(net, test.features)
    acc = accuracy(table, test.labels)
    print(f"test_acc={acc:.4f} over {test.n} samples")
    if cfg.out:
        record = MetricsRecord(config_hash=cfg.hash(), seed=cfg.seeds[0], test_accuracy=acc)
        write_metrics([record], cfg.out, cfg.format)
        print(f"metrics written to {cfg.out} ({cfg.format})")
    return EXIT_OK


def cmd_selftest(_args) -> int:
    return EXIT_OK if run_selftest(verbose=True) else EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ffgoodness",
                                     description="forward-forward training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one configuration over its seed list")
    _add_common_flags(p_train)
    p_train.add_argument("--save-model", dest="save_model",
                         help="save the first seed's trained network (.npz)")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--axis", choices=["k_fraction", "alpha", "moment_p"])
    p_sweep.add_argument("--values", help="comma-separated sweep values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("eval", help="score a saved network on a dataset")
    _add_common_flags(p_eval)
    p_eval.add_argument("--model", required=True, help="saved network (.npz)")
    p_eval.set_defaults(func=cmd_eval)

    p_self = sub.add_parser("selftest", help="run the numerical invariant battery")
    p_self.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
