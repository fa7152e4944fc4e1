"""Command-line front end: collect, adapt, test, report.

Configuration comes from an optional YAML file plus flag overrides; flags
win over the ``NETADAPT_SEED`` environment variable, which wins over the
file. Output locations default under ``NETADAPT_OUT`` (or ``./runs``).
Exit codes: 0 success, 2 usage or input errors, 3 broken invariants.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .errors import InvariantViolation, NetAdaptError, UsageError
from .harness import (ExperimentConfig, run_adapt, run_collect, run_test,
                      setting_ids)
from .reporting import (comparison_table, load_results, plot_cdfs,
                        plot_factor_breakdown, plot_means,
                        qoe_factor_breakdown, report_from_rows)

ENV_SEED = "NETADAPT_SEED"
ENV_OUT = "NETADAPT_OUT"


def _out_base() -> Path:
    return Path(os.environ.get(ENV_OUT, "runs"))


def _load_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {args.config} must hold a mapping")
        d.update(loaded)
    if args.task:
        d["task"] = args.task
    if args.setting:
        d["setting"] = args.setting
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None and "seed" not in d:
        d["seed"] = int(env_seed)
    if args.seed is not None:
        d["seed"] = args.seed
    if "task" not in d:
        raise UsageError("no task given; pass --task or a config file")
    return ExperimentConfig.from_dict(d)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--task", choices=("abr", "cjs", "vp"))
    p.add_argument("--setting", help="registered setting id")
    p.add_argument("--seed", type=int, help=f"overrides ${ENV_SEED}")


def _cmd_collect(args) -> int:
    config = _load_config(args)
    out = Path(args.out) if args.out else \
        _out_base() / f"{config.task}-{config.setting}-{args.policy}-dataset"
    dataset = run_collect(config, args.policy, out_dir=out,
                          episodes=args.episodes)
    print(f"collected {len(dataset)} episodes with {args.policy!r} "
          f"({config.task}/{config.setting}) -> {out}")
    print(f"dataset digest {dataset.digest()[:16]}  "
          f"config digest {config.digest()[:16]}")
    return 0


def _cmd_adapt(args) -> int:
    config = _load_config(args)
    out = Path(args.out) if args.out else \
        _out_base() / f"{config.task}-{config.setting}-seed{config.seed}-ckpt"
    _model, result = run_adapt(config, dataset_path=args.dataset,
                               checkpoint_dir=out)
    print(f"adapted {result.steps} steps in {result.duration_s:.1f}s; "
          f"loss {result.losses[0]:.4f} -> {result.final_loss:.4f}")
    print(f"checkpoint -> {out}  config digest {config.digest()[:16]}")
    return 0


def _cmd_test(args) -> int:
    config = _load_config(args)
    name = args.method_name or \
        (args.policy if args.policy else "adapted")
    out = Path(args.out) if args.out else \
        _out_base() / f"{config.task}-{config.setting}-{name}.jsonl"
    report = run_test(config, out_path=out, checkpoint=args.checkpoint,
                      policy=args.policy, episodes=args.episodes,
                      target_return=args.target_return,
                      method=args.method_name)
    pct = report.percentiles()
    print(f"{report.task}/{report.setting} {report.method}: "
          f"{report.metric} mean {report.mean:.4f}  "
          f"p50 {pct['p50']:.4f}  p90 {pct['p90']:.4f}  "
          f"({len(report.values)} episodes, {report.runtime_s:.1f}s)")
    print(f"results -> {out}")
    return 0


def _cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else _out_base() / "report"
    rows_by_file = [load_results(p) for p in args.results]
    reports = [report_from_rows(rows) for rows in rows_by_file]
    table = comparison_table(reports)
    print(table)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "table": str((out_dir / "table.txt")),
        "cdf": str(plot_cdfs(reports, out_dir / "cdf.png")),
        "means": str(plot_means(reports, out_dir / "means.png")),
    }
    (out_dir / "table.txt").write_text(table + "\n")
    payload = {"task": reports[0].task, "metric": reports[0].metric,
               "summaries": [r.summary_dict() for r in reports]}
    if reports[0].task == "abr" and \
            all("bitrate_mbps" in rows[0] for rows in rows_by_file):
        breakdown = qoe_factor_breakdown(
            {rep.method: rows for rep, rows in zip(reports, rows_by_file)})
        files["factors"] = str(
            plot_factor_breakdown(breakdown, out_dir / "factors.png"))
        payload["factor_breakdown"] = breakdown
    payload["files"] = files
    (out_dir / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"report -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netadapt",
        description="Adapt a frozen sequence backbone to networking tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll a baseline policy into a dataset")
    _add_config_args(p)
    p.add_argument("--policy", required=True,
                   help="bba|mpc (abr) or fifo|fair (cjs)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="dataset directory")
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("adapt", help="train adapters/encoders/heads")
    _add_config_args(p)
    p.add_argument("--dataset", help="collected experience directory "
                                     "(omit for vp: windows are built)")
    p.add_argument("--out", help="checkpoint directory")
    p.set_defaults(fn=_cmd_adapt)

    p = sub.add_parser("test", help="evaluate a checkpoint or baseline")
    _add_config_args(p)
    p.add_argument("--checkpoint", help="adapted checkpoint directory")
    p.add_argument("--policy", help="baseline name (bba, mpc, fifo, fair, "
                                    "hold, lr, velocity)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--target-return", type=float,
                   help="conditioning return (default: checkpoint's)")
    p.add_argument("--method-name", help="label for result rows")
    p.add_argument("--out", help="results JSONL path")
    p.set_defaults(fn=_cmd_test)

    p = sub.add_parser("report", help="compare result files, render plots")
    p.add_argument("results", nargs="+", help="result JSONL files")
    p.add_argument("--out", help="report output directory")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except NetAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
