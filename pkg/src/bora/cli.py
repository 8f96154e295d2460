"""Command-line interface: ``bora {count,train,analyze,sweep,gradcheck}``.

Run configs are INI files. Values are resolved in the order built-in
defaults, then the config file, then command-line flags (last wins).

Exit codes: 0 success, 2 usage/config error, 3 numeric or training failure,
4 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import configparser
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from . import __version__
from .adapters import (
    AdapterConfig,
    Checkpoint,
    SigmaTransform,
    Variant,
    count_flops_per_token,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .analysis import DEFAULT_THRESHOLD, SPECTRUM_COLUMNS, adapter_spectrum, compare_spectra
from .exceptions import ConfigError, FormatError, NumericError
from .grad import gradcheck_suite
from .tasks import (
    LOSS_COLUMNS,
    SWEEP_COLUMNS,
    budget_sweep,
    make_approx_task,
    make_regression_task,
    run_approximation,
    run_regression,
    write_csv,
)

log = logging.getLogger("bora")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "adapter": {"variant": "bora", "m": "64", "n": "64", "r": "4", "b": "4",
                "sigma_transform": "norm-exp", "alpha": ""},
    "task": {"kind": "approx", "target_rank": "16", "task_seed": "", "samples": "256",
             "noise": "0.0", "gap_scale": "1.0"},
    "train": {"steps": "500", "lr": "0.003", "seed": "0", "warmup": "10", "weight_decay": "0.0"},
    "output": {"dir": "bora-run"},
    "sweep": {"seeds": "0"},
}
GRID_KEYS = ("variant", "m", "n", "r", "b", "sigma_transform", "alpha")
GRADCHECK_TOL = {"bora": 1e-6, "lora": 1e-8}


@dataclass
class RunConfig:
    """Resolved run settings. Every grid point is validated on construction."""

    kind: str
    grid: list[AdapterConfig]
    seeds: list[int]
    steps: int
    lr: float
    warmup: int
    weight_decay: float
    task_opts: dict = field(default_factory=dict)
    out_dir: str = "bora-run"


def _read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise FormatError(f"cannot parse {path}: {exc}") from None
    return parser


def _apply_overrides(parser, args) -> None:
    mapping = {
        ("adapter", "variant"): "variant", ("adapter", "m"): "m", ("adapter", "n"): "n",
        ("adapter", "r"): "r", ("adapter", "b"): "b",
        ("adapter", "sigma_transform"): "sigma_transform", ("adapter", "alpha"): "alpha",
        ("task", "kind"): "task", ("task", "target_rank"): "target_rank",
        ("task", "task_seed"): "task_seed", ("task", "samples"): "samples",
        ("task", "noise"): "noise",
        ("train", "steps"): "steps", ("train", "lr"): "lr", ("train", "seed"): "seed",
        ("train", "warmup"): "warmup", ("train", "weight_decay"): "weight_decay",
        ("output", "dir"): "out_dir",
    }
    for (section, key), attr in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            parser.set(section, key, str(value))


def _split(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _int(value: str, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None


def _float(value: str, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def _adapter_config(values: dict) -> AdapterConfig:
    alpha = values.get("alpha", "")
    return AdapterConfig(
        m=_int(values["m"], "m"),
        n=_int(values["n"], "n"),
        r=_int(values["r"], "r"),
        b=_int(values["b"], "b"),
        variant=values["variant"],
        sigma_transform=values["sigma_transform"],
        alpha=_float(alpha, "alpha") if alpha not in ("", None) else None,
    )


def build_run_config(parser, sweep: bool = False) -> RunConfig:
    """Resolve a parsed INI into a :class:`RunConfig`, failing fast on any bad grid point."""
    adapter = dict(parser["adapter"])
    task = parser["task"]
    train = parser["train"]
    if sweep:
        section = parser["sweep"]
        axes = [_split(section.get(k, adapter[k])) or [""] for k in GRID_KEYS]
        grid, seen = [], set()
        for combo in itertools.product(*axes):
            config = _adapter_config(dict(zip(GRID_KEYS, combo)))
            if config not in seen:
                seen.add(config)
                grid.append(config)
        seeds = [_int(s, "seeds") for s in _split(section["seeds"])]
    else:
        grid = [_adapter_config(adapter)]
        seeds = [_int(train["seed"], "seed")]
    if not grid or not seeds:
        raise ConfigError("sweep grid is empty")
    kind = task["kind"].strip().lower()
    if kind not in ("approx", "regression"):
        raise ConfigError(f"task kind must be 'approx' or 'regression', got {kind!r}")
    task_seed = task.get("task_seed", "")
    task_opts = {
        "target_rank": _int(task["target_rank"], "target_rank"),
        "task_seed": _int(task_seed, "task_seed") if task_seed else None,
        "samples": _int(task["samples"], "samples"),
        "noise": _float(task["noise"], "noise"),
        "gap_scale": _float(task["gap_scale"], "gap_scale"),
    }
    for config in grid:
        if not 0 <= task_opts["target_rank"] <= min(config.m, config.n):
            raise ConfigError(
                f"target_rank={task_opts['target_rank']} does not fit {config.m}x{config.n}"
            )
        if kind == "approx" and task_opts["target_rank"] < 1:
            raise ConfigError("approximation tasks need target_rank >= 1")
    steps = _int(train["steps"], "steps")
    lr = _float(train["lr"], "lr")
    if steps < 0 or not lr > 0:
        raise ConfigError(f"need steps >= 0 and lr > 0, got steps={steps}, lr={lr}")
    return RunConfig(
        kind=kind,
        grid=grid,
        seeds=seeds,
        steps=steps,
        lr=lr,
        warmup=_int(train["warmup"], "warmup"),
        weight_decay=_float(train["weight_decay"], "weight_decay"),
        task_opts=task_opts,
        out_dir=parser["output"]["dir"],
    )


def cmd_count(args) -> int:
    config = AdapterConfig(args.m, args.n, args.r, args.b, args.variant, alpha=None)
    per_adapter = count_params(config)
    rows = [
        ("variant", config.variant.value),
        ("m", config.m),
        ("n", config.n),
        ("r", config.r),
        ("b", config.b),
        ("params_per_adapter", per_adapter),
        ("flops_per_token", count_flops_per_token(config, include_base=True)),
        ("adapter_flops_per_token", count_flops_per_token(config, include_base=False)),
        ("adapters", args.adapters),
        ("total_params", per_adapter * args.adapters),
        ("total_params_millions", f"{per_adapter * args.adapters / 1e6:.2f}M"),
    ]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"{key:<{width}}  {value}")
    return EXIT_OK


def _run_single(run: RunConfig):
    config, seed = run.grid[0], run.seeds[0]
    opts = run.task_opts
    task_seed = seed if opts["task_seed"] is None else opts["task_seed"]
    if run.kind == "approx":
        task = make_approx_task(config.m, config.n, opts["target_rank"], task_seed, opts["gap_scale"])
        return run_approximation(config, task, run.steps, run.lr, seed, run.warmup, run.weight_decay)
    task = make_regression_task(
        config.m, config.n, opts["target_rank"], task_seed, opts["samples"], opts["noise"],
        opts["gap_scale"],
    )
    return run_regression(config, task, run.steps, run.lr, seed, run.warmup, run.weight_decay)


def cmd_train(args) -> int:
    parser = _read_config(args.config)
    _apply_overrides(parser, args)
    run = build_run_config(parser)
    report = _run_single(run)
    os.makedirs(run.out_dir, exist_ok=True)
    write_csv(report.loss_rows(), LOSS_COLUMNS, os.path.join(run.out_dir, "losses.csv"))
    summary = {**report.summary(), "task": run.kind, **run.task_opts}
    with open(os.path.join(run.out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ckpt = Checkpoint(config=report.config, params=report.params, step=report.steps)
    save_checkpoint(ckpt, os.path.join(run.out_dir, "checkpoint.bin"))
    print(f"steps={report.steps} initial_loss={summary['initial_loss']!r} "
          f"final_error={report.final_error!r} params={report.param_count} -> {run.out_dir}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.threshold > 0:
        raise ConfigError(f"threshold must be positive, got {args.threshold}")
    ckpt = load_checkpoint(args.checkpoint)
    label = args.label or os.path.basename(args.checkpoint)
    report = adapter_spectrum(ckpt.params, ckpt.config, args.threshold, label, args.relative)
    text = write_csv(compare_spectra([report]), SPECTRUM_COLUMNS, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    parser = _read_config(args.config)
    _apply_overrides(parser, args)
    run = build_run_config(parser, sweep=True)
    rows, errors = budget_sweep(
        run.grid, run.seeds, run.kind, run.task_opts, run.steps, run.lr, run.warmup,
        max_workers=args.workers,
    )
    text = write_csv(rows, SWEEP_COLUMNS, args.out)
    if args.out is None:
        sys.stdout.write(text)
    failed = sum(err is not None for err in errors)
    if failed:
        log.warning("%d of %d sweep rows failed", failed, len(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(args.configs, args.step)
    status = EXIT_OK
    for name, err in results.items():
        tol = GRADCHECK_TOL["lora" if name == "lora" else "bora"]
        ok = err < tol
        status = status if ok else EXIT_NUMERIC
        print(f"{name:<10} max_rel_error={err:.3e} tol={tol:.0e} {'PASS' if ok else 'FAIL'}")
    return status


def _add_adapter_flags(p, require_geometry=False):
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--m", type=int, required=require_geometry)
    p.add_argument("--n", type=int, required=require_geometry)
    p.add_argument("--r", type=int, required=require_geometry)
    p.add_argument("--b", type=int)


def _add_run_flags(p):
    _add_adapter_flags(p)
    p.add_argument("--sigma-transform", dest="sigma_transform",
                   choices=[t.value for t in SigmaTransform])
    p.add_argument("--alpha", type=float)
    p.add_argument("--task", choices=["approx", "regression"])
    p.add_argument("--target-rank", dest="target_rank", type=int)
    p.add_argument("--task-seed", dest="task_seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bora", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="trainable parameters and FLOPs per token")
    _add_adapter_flags(p, require_geometry=True)
    p.set_defaults(variant="bora", b=1)
    p.add_argument("--adapters", type=int, default=1, help="number of adapted layers")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("train", help="train one adapter; writes losses.csv, report.json, checkpoint.bin")
    p.add_argument("--config", help="INI run config")
    _add_run_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="singular-value report for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--relative", action="store_true",
                   help="scale the threshold by the update's Frobenius norm")
    p.add_argument("--label")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="train a grid of configs x seeds into one CSV")
    p.add_argument("--config", required=True, help="INI run config with a [sweep] section")
    _add_run_flags(p)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--workers", type=int, help="parallel rows (default: $BORA_MAX_WORKERS or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--configs", type=int, default=20, help="seeded configs per transform")
    p.add_argument("--step", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        step = getattr(exc, "step", None)
        where = f" (step {step})" if step is not None else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
