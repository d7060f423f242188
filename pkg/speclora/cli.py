"""
speclora command-line interface

Subcommands:
    analyze    spectral comparison of two weight containers
    gen-task   write a planted spectral-recovery task
    train      fit an adapter on a planted task
    sweep      k / rank / direction ablations
    gradcheck  finite-difference check of the adapter backward pass

Exit codes: 0 success, 2 usage or format error, 3 shape mismatch,
4 numeric divergence, 5 verification failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import ConfigManager, configure_logging
from .configs import AdapterConfig, Direction, TaskSpec, TrainConfig, build
from .errors import ConfigError, DimensionError, SpecLoraError, VerificationError
from .gradcheck import run_gradcheck
from .serialization import (
    group_by_layer,
    load_config,
    load_container,
    load_task,
    save_adapter,
    save_task,
    write_ablation_csv,
    write_ablation_json,
    write_loss_curve,
    write_reports_csv,
    write_reports_json,
    write_run_result,
)
from .spectral import analyze_pairs
from .train import AblationKind, gen_planted_task, run_ablation, train_adapter

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2

SWEEP_KINDS = {"k": AblationKind.K_SWEEP, "rank": AblationKind.RANK_SWEEP, "direction": AblationKind.DIRECTION}


def echo_config(command: str, config: Dict[str, Any]):
    """Print the config echo line that precedes every run's results"""
    print(f"config {command} {json.dumps(config, sort_keys=True)}")


def _adapter_config(args) -> AdapterConfig:
    if args.adapter:
        cfg = load_config(args.adapter, AdapterConfig)
        if args.preset:
            return AdapterConfig.preset(args.preset, **cfg.model_dump(exclude_unset=True))
        return cfg
    if args.preset:
        return AdapterConfig.preset(args.preset)
    return AdapterConfig()


def _train_config(args) -> TrainConfig:
    return load_config(args.train, TrainConfig) if args.train else TrainConfig()


def cmd_analyze(args) -> int:
    pre = load_container(args.pre)
    ft = load_container(args.ft)
    echo_config("analyze", {"pre": str(args.pre), "ft": str(args.ft), "match": args.match, "format": args.format})

    reports = analyze_pairs(pre.tensors, ft.tensors, args.match)
    if not reports:
        raise ConfigError(f"no tensor present in both containers matches '{args.match}'")

    if args.format == "csv":
        write_reports_csv(args.out, reports)
    else:
        write_reports_json(args.out, reports)

    for report in reports:
        top = report.model_dump(mode="json")["sigma_ratio"][:3]
        print(
            f"{report.matrix_name}: effective rank {report.effective_rank_pre:.3f} -> "
            f"{report.effective_rank_ft:.3f}, top ratios {top}"
        )
    by_name = {report.matrix_name: report for report in reports}
    groups = group_by_layer(by_name)
    for index in sorted(i for i in groups if i is not None):
        members = [by_name[name] for name in groups[index]]
        pre_rank = sum(r.effective_rank_pre for r in members) / len(members)
        ft_rank = sum(r.effective_rank_ft for r in members) / len(members)
        print(f"layer {index}: {len(members)} matrices, mean effective rank {pre_rank:.3f} -> {ft_rank:.3f}")
    print(f"Wrote {len(reports)} reports to {args.out}")
    return EXIT_OK


def cmd_gen_task(args) -> int:
    spec = load_config(args.spec, TaskSpec)
    echo_config("gen-task", spec.model_dump(mode="json"))
    task = gen_planted_task(spec)
    save_task(args.out, task, spec.model_dump_json())
    print(f"Wrote planted task ({spec.n}x{spec.m}, {spec.num_samples} samples) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    acfg = _adapter_config(args)
    tcfg = _train_config(args)
    echo_config("train", {"adapter": acfg.model_dump(mode="json"), "train": tcfg.model_dump(mode="json")})

    task = load_task(args.task)
    adapter, result = train_adapter(task.w_base, task.dataset, acfg, tcfg, task.eval_dataset)

    out = Path(args.out)
    save_adapter(out / "checkpoint", adapter)
    write_run_result(out / "run_result.json", result)
    write_loss_curve(out / "loss_curve.csv", result.loss_curve)
    print(
        f"final train loss {result.final_train_loss:.6e}, eval loss {result.final_eval_loss:.6e}, "
        f"trainable params {result.trainable_params}"
    )
    return EXIT_OK


def _parse_grid(kind: AblationKind, raw: str) -> List[Any]:
    values = [item.strip() for item in raw.split(",") if item.strip()]
    if not values:
        raise ConfigError("--grid must list at least one value")
    if kind is AblationKind.DIRECTION:
        try:
            return [Direction(value) for value in values]
        except ValueError as e:
            raise ConfigError(f"bad direction in --grid: {e}") from e
    try:
        return [int(value) for value in values]
    except ValueError as e:
        raise ConfigError(f"--grid values must be integers for a {kind.value}: {e}") from e


def cmd_sweep(args) -> int:
    kind = SWEEP_KINDS[args.kind]
    grid = _parse_grid(kind, args.grid)
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be at least 1, got {args.seeds}")
    jobs = args.jobs if args.jobs is not None else ConfigManager.get_int("SPECLORA_JOBS")

    acfg = _adapter_config(args)
    tcfg = _train_config(args)
    seeds = [tcfg.seed + i for i in range(args.seeds)]
    echo_config(
        "sweep",
        {
            "kind": kind.value,
            "grid": [getattr(v, "value", v) for v in grid],
            "seeds": seeds,
            "jobs": jobs,
            "adapter": acfg.model_dump(mode="json"),
            "train": tcfg.model_dump(mode="json"),
        },
    )

    task = load_task(args.task)
    rows = run_ablation(kind, grid, task, acfg, tcfg, seeds=seeds, jobs=jobs)
    write_ablation_csv(args.out, rows)
    if args.json:
        write_ablation_json(args.json, rows)

    for row in rows:
        print(f"{kind.value}={row.grid_value} seed={row.seed}: train loss {row.final_train_loss:.6e}")
    print(f"Wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    echo_config("gradcheck", {"seed": args.seed, "cases": args.cases})
    result = run_gradcheck(seed=args.seed, cases=args.cases, corrupt=args.corrupt)
    print(f"max relative error {result.max_rel_error:.3e} over {len(result.cases)} cases")
    if not result.passed:
        raise VerificationError(
            f"gradient check failed: {result.max_rel_error:.3e} >= {result.tolerance:.0e}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speclora", description="Spectral low-rank adaptation toolkit")
    parser.add_argument("--log-level", default=None, help="Override SPECLORA_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)

    analyze = subparsers.add_parser("analyze", help="Compare spectra of two weight containers")
    analyze.add_argument("--pre", required=True, type=Path, help="Pre-trained weight container")
    analyze.add_argument("--ft", required=True, type=Path, help="Fine-tuned weight container")
    analyze.add_argument("--out", required=True, type=Path, help="Report output path")
    analyze.add_argument("--format", choices=["json", "csv"], default="json")
    analyze.add_argument("--match", default="*", help="Glob over tensor names")
    analyze.set_defaults(handler=cmd_analyze)

    gen_task = subparsers.add_parser("gen-task", help="Generate a planted spectral-recovery task")
    gen_task.add_argument("--spec", required=True, type=Path, help="TaskSpec JSON file")
    gen_task.add_argument("--out", required=True, type=Path, help="Output container directory")
    gen_task.set_defaults(handler=cmd_gen_task)

    for name, handler, help_text in (
        ("train", cmd_train, "Train an adapter on a planted task"),
        ("sweep", cmd_sweep, "Run an ablation sweep"),
    ):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--task", required=True, type=Path, help="Task container from gen-task")
        sub.add_argument("--adapter", type=Path, help="AdapterConfig JSON file")
        sub.add_argument("--train", type=Path, help="TrainConfig JSON file")
        sub.add_argument("--preset", choices=["nlu", "commonsense", "vision"], help="Start from a recipe preset")
        sub.set_defaults(handler=handler)
        if name == "train":
            sub.add_argument("--out", required=True, type=Path, help="Output directory")
        else:
            sub.add_argument("--kind", required=True, choices=sorted(SWEEP_KINDS))
            sub.add_argument("--grid", required=True, help="Comma-separated grid values")
            sub.add_argument("--seeds", type=int, default=5, help="Repeats per grid value")
            sub.add_argument("--jobs", type=int, default=None, help="Parallel grid points")
            sub.add_argument("--out", required=True, type=Path, help="Results CSV path")
            sub.add_argument("--json", type=Path, help="Also write results as JSON")

    gradcheck = subparsers.add_parser("gradcheck", help="Verify adapter gradients by finite differences")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--cases", type=int, default=20)
    gradcheck.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    gradcheck.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        return args.handler(args)
    except DimensionError as e:
        print(f"Error: shape mismatch: {e}", file=sys.stderr)
        return e.exit_code
    except SpecLoraError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
