"""Desk-scale training tasks for comparing adapter variants.

* Matrix approximation: fit ``W + (alpha/r) dW`` to a target ``W*`` whose gap
  ``W* - W`` has a chosen rank.
* Teacher-student regression: a frozen linear layer plus adapter trained on
  mean squared error against a teacher's outputs.

Both train with AdamW under a linear warm-up/decay schedule and are fully
determined by their seeds.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .adapters import (
    AdapterConfig,
    AdapterParams,
    count_flops_per_token,
    count_params,
    forward,
    init_params,
    materialize,
)
from .exceptions import BoraError, ConfigError, TrainingError
from .grad import backward_delta
from .optim import OptimState, adamw_step, linear_warmup_decay
from .rand_init import normal_stream, splitmix64, uniform_matrix

__all__ = [
    "ApproxTask",
    "RegressionTask",
    "TrainReport",
    "make_approx_task",
    "make_regression_task",
    "run_approximation",
    "run_regression",
    "budget_sweep",
    "matched_lora_rank",
    "SWEEP_COLUMNS",
    "LOSS_COLUMNS",
    "write_csv",
    "max_workers_from_env",
]

log = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "variant", "m", "n", "r", "b", "sigma_transform", "alpha", "seed", "steps",
    "params", "flops", "final_error", "wall_ms",
)
LOSS_COLUMNS = ("step", "lr", "loss", "wall_ms")
WORKERS_ENV = "BORA_MAX_WORKERS"
DEFAULT_WARMUP = 10


def _seeds(seed: int, count: int) -> list[int]:
    out, state = [], seed
    for _ in range(count):
        state, value = splitmix64(state)
        out.append(value)
    return out


@dataclass
class ApproxTask:
    W: np.ndarray
    W_star: np.ndarray
    target_rank: int

    @property
    def gap(self) -> np.ndarray:
        return self.W_star - self.W


@dataclass
class RegressionTask:
    W: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    teacher: np.ndarray | None = None
    noise: float = 0.0


@dataclass
class TrainReport:
    """Per-step record of one training run."""

    config: AdapterConfig
    seed: int
    steps: int
    lr: float
    losses: list[float]
    learning_rates: list[float]
    final_loss: float
    final_error: float
    param_count: int
    flops_per_token: int
    wall_ms: float
    step_wall_ms: list[float] = field(default_factory=list)
    params: AdapterParams | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            **self.config.to_dict(),
            "seed": self.seed,
            "steps": self.steps,
            "lr": self.lr,
            "initial_loss": self.losses[0] if self.losses else None,
            "final_loss": self.final_loss,
            "final_error": self.final_error,
            "params": self.param_count,
            "flops": self.flops_per_token,
            "wall_ms": self.wall_ms,
        }

    def loss_rows(self) -> list[dict]:
        return [
            {"step": i, "lr": repr(lr), "loss": repr(loss), "wall_ms": f"{ms:.3f}"}
            for i, (lr, loss, ms) in enumerate(
                zip(self.learning_rates, self.losses, self.step_wall_ms)
            )
        ]

    def sweep_row(self) -> dict:
        c = self.config
        return {
            "variant": c.variant.value,
            "m": c.m,
            "n": c.n,
            "r": c.r,
            "b": c.b,
            "sigma_transform": c.sigma_transform.value,
            "alpha": repr(c.alpha),
            "seed": self.seed,
            "steps": self.steps,
            "params": self.param_count,
            "flops": self.flops_per_token,
            "final_error": repr(self.final_error),
            "wall_ms": f"{self.wall_ms:.3f}",
        }


def make_approx_task(m: int, n: int, target_rank: int, seed: int, gap_scale: float = 1.0) -> ApproxTask:
    """Random ``W`` in ``[-1, 1)`` and ``W* = W + gap_scale * P Q / sqrt(k)``.

    ``P`` (``m x k``) and ``Q`` (``k x n``) are uniform in ``[-1, 1)``, so the
    gap has rank ``k = target_rank`` by construction.
    """
    if not 1 <= target_rank <= min(m, n):
        raise ConfigError(f"target_rank must lie in [1, {min(m, n)}], got {target_rank}")
    s_w, s_p, s_q = _seeds(seed, 3)
    W = uniform_matrix(s_w, m, n)
    P = uniform_matrix(s_p, m, target_rank)
    Q = uniform_matrix(s_q, target_rank, n)
    gap = linalg.matmul(P, Q) * (gap_scale / math.sqrt(target_rank))
    return ApproxTask(W=W, W_star=W + gap, target_rank=target_rank)


def make_regression_task(
    m: int,
    n: int,
    gap_rank: int,
    seed: int,
    samples: int = 256,
    noise: float = 0.0,
    gap_scale: float = 1.0,
) -> RegressionTask:
    """Teacher ``W + gap`` with a rank-``gap_rank`` gap; inputs uniform in ``[-1, 1)``.

    ``gap_rank = 0`` makes the teacher equal to the frozen weight.
    """
    s_task, s_x, s_noise = _seeds(seed, 3)
    if gap_rank:
        approx = make_approx_task(m, n, gap_rank, s_task, gap_scale)
        W, teacher = approx.W, approx.W_star
    else:
        W = uniform_matrix(s_task, m, n)
        teacher = W.copy()
    X = uniform_matrix(s_x, samples, n)
    Y = X @ teacher.T
    if noise:
        Y = Y + noise * normal_stream(s_noise, samples * m).reshape(samples, m)
    return RegressionTask(W=W, inputs=X, labels=Y, teacher=teacher, noise=noise)


def _train(config, seed, steps, lr, warmup, weight_decay, loss_and_grad, final_error):
    if steps < 0:
        raise ConfigError(f"steps must be non-negative, got {steps}")
    start = time.perf_counter()
    params = init_params(config, seed)
    state = OptimState(lr=lr, weight_decay=weight_decay)
    losses, rates, step_ms = [], [], []
    for t in range(steps):
        tick = time.perf_counter()
        with np.errstate(over="ignore", invalid="ignore"):
            # divergence is detected and reported below
            loss, grads = loss_and_grad(params)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {t}", step=t)
        rate = linear_warmup_decay(t, steps, lr, warmup)
        params, state = adamw_step(params, grads, state, lr=rate)
        losses.append(loss)
        rates.append(rate)
        step_ms.append((time.perf_counter() - tick) * 1e3)
    with np.errstate(over="ignore", invalid="ignore"):
        final_loss, _ = loss_and_grad(params)
    if not math.isfinite(final_loss):
        raise TrainingError(f"loss became non-finite at step {steps}", step=steps)
    return TrainReport(
        config=config,
        seed=seed,
        steps=steps,
        lr=lr,
        losses=losses,
        learning_rates=rates,
        final_loss=final_loss,
        final_error=final_error(final_loss),
        param_count=count_params(config),
        flops_per_token=count_flops_per_token(config),
        wall_ms=(time.perf_counter() - start) * 1e3,
        step_wall_ms=step_ms,
        params=params,
    )


def _check_geometry(config: AdapterConfig, W: np.ndarray) -> None:
    if W.shape != (config.m, config.n):
        raise ConfigError(f"task weight is {W.shape[0]}x{W.shape[1]}, config expects {config.m}x{config.n}")


def run_approximation(
    config: AdapterConfig,
    task: ApproxTask,
    steps: int,
    lr: float,
    seed: int,
    warmup: int = DEFAULT_WARMUP,
    weight_decay: float = 0.0,
) -> TrainReport:
    """Minimize ``||W + (alpha/r) dW - W*||_F^2`` with AdamW.

    ``losses[t]`` is the loss before update ``t``; ``final_error`` is the
    Frobenius norm of the residual after the last update.
    """
    _check_geometry(config, task.W)
    gap = task.gap
    scale = config.scale

    def loss_and_grad(params):
        resid = scale * materialize(params, config) - gap
        return float(np.sum(resid * resid)), backward_delta(params, config, 2.0 * scale * resid)

    return _train(config, seed, steps, lr, warmup, weight_decay, loss_and_grad, math.sqrt)


def run_regression(
    config: AdapterConfig,
    task: RegressionTask,
    steps: int,
    lr: float,
    seed: int,
    warmup: int = DEFAULT_WARMUP,
    weight_decay: float = 0.0,
) -> TrainReport:
    """Full-batch AdamW on ``mean_t ||W x_t + adapter(x_t) - y_t||^2``.

    The adapter output uses the segmented forward pass; ``final_error`` is
    the root of the final loss.
    """
    _check_geometry(config, task.W)
    X, Y = task.inputs, task.labels
    if X.ndim != 2 or X.shape[1] != config.n or Y.shape != (X.shape[0], config.m):
        raise ConfigError(f"inputs {X.shape} / labels {Y.shape} do not match {config.m}x{config.n}")
    base = X @ task.W.T
    count = X.shape[0]

    def loss_and_grad(params):
        resid = base + forward(params, config, X) - Y
        loss = float(np.sum(resid * resid)) / count
        grad_delta = (2.0 * config.scale / count) * (resid.T @ X)
        return loss, backward_delta(params, config, grad_delta)

    return _train(config, seed, steps, lr, warmup, weight_decay, loss_and_grad, math.sqrt)


def matched_lora_rank(m: int, n: int, r: int, b: int) -> int:
    """LoRA rank whose budget covers BoRA's: ``r + ceil(b^2 r / (m + n))``."""
    return r + math.ceil(b * b * r / (m + n))


def max_workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, value)


def _sweep_job(job):
    config, seed, task_kind, task_opts, steps, lr, warmup = job
    task_seed = task_opts.get("task_seed")
    task_seed = seed if task_seed is None else task_seed
    try:
        if task_kind == "approx":
            task = make_approx_task(
                config.m, config.n, task_opts.get("target_rank", 1), task_seed,
                task_opts.get("gap_scale", 1.0),
            )
            report = run_approximation(config, task, steps, lr, seed, warmup)
        elif task_kind == "regression":
            task = make_regression_task(
                config.m, config.n, task_opts.get("target_rank", 1), task_seed,
                task_opts.get("samples", 256), task_opts.get("noise", 0.0),
                task_opts.get("gap_scale", 1.0),
            )
            report = run_regression(config, task, steps, lr, seed, warmup)
        else:
            raise ConfigError(f"unknown task kind {task_kind!r}")
    except BoraError as exc:
        row = {
            "variant": config.variant.value, "m": config.m, "n": config.n, "r": config.r,
            "b": config.b, "sigma_transform": config.sigma_transform.value,
            "alpha": repr(config.alpha), "seed": seed, "steps": steps,
            "params": count_params(config), "flops": count_flops_per_token(config),
            "final_error": "nan", "wall_ms": "0.000",
        }
        return row, f"{type(exc).__name__}: {exc}"
    report.params = None
    return report.sweep_row(), None


def budget_sweep(
    configs,
    seeds,
    task_kind: str = "approx",
    task_opts: dict | None = None,
    steps: int = 200,
    lr: float = 1e-2,
    warmup: int = DEFAULT_WARMUP,
    max_workers: int | None = None,
) -> tuple[list[dict], list[str | None]]:
    """Train every ``(config, seed)`` pair and return one CSV row per run.

    A failed run still yields a row, with ``final_error`` set to ``nan``;
    the matching entry of the second return value holds the error message.
    Rows come back in grid order regardless of worker count.
    """
    configs = list(configs)
    seeds = list(seeds)
    if not configs or not seeds:
        raise ConfigError("sweep grid is empty")
    task_opts = dict(task_opts or {})
    jobs = [(c, s, task_kind, task_opts, steps, lr, warmup) for c in configs for s in seeds]
    workers = max_workers if max_workers is not None else max_workers_from_env()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]
    rows = [row for row, _ in results]
    errors = [err for _, err in results]
    for row, err in zip(rows, errors):
        if err:
            log.warning("run %s r=%s b=%s seed=%s failed: %s",
                        row["variant"], row["r"], row["b"], row["seed"], err)
    return rows, errors


def write_csv(rows, columns, path=None) -> str:
    """Render rows as CSV with a header; also write to ``path`` if given."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in columns})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
