"""Command-line entry point.

Subcommands: ``pretrain``, ``ttt``, ``eval``, ``critic-bench`` and ``ablate``.
Each takes ``--config run.toml`` plus optional ``--seed``, ``--out`` and
repeated ``--set key=value`` overrides. Outputs go under ``--out``, or under
``$PROGRESSTTT_OUTPUT_ROOT/<command>-seed<seed>`` (default root ``runs``).

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import load_config, save_config
from .evalbench import ABLATION_HEADER, build_validation_set, critic_fscore, mismatch_cases, run_ablation_table
from .exceptions import ConfigError
from .policy import load_params, save_params
from .ttt import RunConfig, eval_success_rate, pretrain_bc, run_ttt

OUTPUT_ROOT_ENV = "PROGRESSTTT_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ARTIFACTS = ("params.bin", "metrics.jsonl", "summary.csv", "resolved_config.toml")
BENCH_ESTIMATORS = ("vanilla", "uniform-4", "uniform-8", "accumulative")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="progressttt", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted keys address sections); repeatable")

    p = sub.add_parser("pretrain", help="behavior cloning warm start")
    common(p)
    p = sub.add_parser("ttt", help="test-time training from BC or given params")
    common(p)
    p.add_argument("--params", type=Path, default=None, help="start from these params instead of BC")
    p = sub.add_parser("eval", help="greedy success rate of saved params")
    common(p)
    p.add_argument("--params", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=None)
    p = sub.add_parser("critic-bench", help="estimator F-score on a balanced validation set")
    common(p)
    p.add_argument("--estimators", nargs="+", default=list(BENCH_ESTIMATORS))
    p = sub.add_parser("ablate", help="run the configured ablation variants")
    common(p)
    p.add_argument("--variants", nargs="+", default=None)
    return parser


def _resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    return load_config(args.config, overrides)


def _out_dir(args, config: RunConfig) -> Path:
    if args.out is not None:
        out = args.out
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{args.command}-seed{config.master_seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(header))
        writer.writeheader()
        writer.writerows(rows)


def _load_params(path: Path, config: RunConfig):
    params = load_params(path)
    expected = (config.num_slots, config.initial_params().vocab_size, config.feature_dim)
    if params.weights.shape != expected:
        raise ConfigError(f"params in {path} have shape {params.weights.shape}, config expects {expected}")
    return params


def _cmd_pretrain(args, config: RunConfig) -> None:
    out = _out_dir(args, config)
    params = pretrain_bc(config)
    save_params(params, out / "params.bin")
    save_config(config, out / "resolved_config.toml")
    print(f"{eval_success_rate(params, config):.4f}")


def _cmd_ttt(args, config: RunConfig) -> None:
    out = _out_dir(args, config)
    save_config(config, out / "resolved_config.toml")
    start = time.perf_counter()
    initial = _load_params(args.params, config) if args.params is not None else pretrain_bc(config)
    initial_sr = eval_success_rate(initial, config)
    with open(out / "metrics.jsonl", "w") as log:
        params, metrics = run_ttt(initial, config, sink=lambda row: log.write(json.dumps(row, sort_keys=True) + "\n"))
    save_params(params, out / "params.bin")
    final_sr = eval_success_rate(params, config)
    summary = {
        "master_seed": config.master_seed,
        "iterations": config.num_iterations,
        "initial_sr": initial_sr,
        "final_sr": final_sr,
        "final_mean_reward": metrics[-1]["mean_reward"] if metrics else "",
        "critic_calls": sum(m["critic_calls"] for m in metrics),
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    _write_csv(out / "summary.csv", summary, [summary])
    print(f"{final_sr:.4f}")


def _cmd_eval(args, config: RunConfig) -> None:
    params = _load_params(args.params, config)
    print(f"{eval_success_rate(params, config, args.episodes):.4f}")


def _cmd_critic_bench(args, config: RunConfig) -> None:
    out = _out_dir(args, config)
    validation = build_validation_set(config, config.ablation.validation_success, config.ablation.validation_failure)
    rows = []
    for name in args.estimators:
        report = critic_fscore(name, config.critic, validation, config=config)
        rows.append({"estimator": name, "precision": report.precision, "recall": report.recall, "f1": report.f1,
                     "threshold": report.threshold_used})
        print(f"{name} {report.f1:.4f}")
    _write_csv(out / "critic_bench.csv", rows[0].keys(), rows)
    if config.env.mismatch_enabled:
        with open(out / "mismatch.jsonl", "w") as f:
            for record in mismatch_cases(config):
                f.write(json.dumps(record) + "\n")


def _cmd_ablate(args, config: RunConfig) -> None:
    out = _out_dir(args, config)
    save_config(config, out / "resolved_config.toml")
    rows = run_ablation_table(config, args.variants, out_path=out / "ablation.csv", log_dir=out / "logs")
    for row in rows:
        print(" ".join(str(row[k]) for k in ABLATION_HEADER[:4]))


COMMANDS = {
    "pretrain": _cmd_pretrain,
    "ttt": _cmd_ttt,
    "eval": _cmd_eval,
    "critic-bench": _cmd_critic_bench,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _resolve(args)
        COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
