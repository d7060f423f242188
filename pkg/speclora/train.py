"""
Desk-Scale Training Harness

Planted spectral-recovery tasks, AdamW with a linear warmup/decay schedule,
MSE training of an adapter, and the ablation sweeps (k, rank, direction).
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .adapter import SpecLoraAdapter, rescale_singular_values
from .config import ConfigManager
from .configs import AdapterConfig, Direction, Mode, TaskSpec, TrainConfig, build
from .errors import ConfigError, DimensionError, NumericError
from .linalg import DenseMatrix, as_matrix, frobenius_norm

logger = logging.getLogger(__name__)

# relative size of the planted low-rank drift
DRIFT_FRACTION = 0.05


@dataclass(frozen=True)
class Dataset:
    x: DenseMatrix
    y: DenseMatrix

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class PlantedTask:
    w_base: DenseMatrix
    w_target: DenseMatrix
    dataset: Dataset
    eval_dataset: Dataset


def gen_planted_task(spec: TaskSpec) -> PlantedTask:
    """
    Draw a Gaussian base weight and a target that amplifies its top-k
    singular values by d_true and adds a rank_true drift of 5% of ||w_base||_F.
    """
    rng = np.random.default_rng(spec.seed)
    w_base = rng.standard_normal((spec.n, spec.m))

    w_target = rescale_singular_values(w_base, spec.d_true, Direction.TOP)
    if spec.rank_true > 0:
        left = rng.standard_normal((spec.n, spec.rank_true))
        right = rng.standard_normal((spec.rank_true, spec.m))
        drift = left @ right
        w_target = w_target + drift * (DRIFT_FRACTION * frobenius_norm(w_base) / frobenius_norm(drift))

    def draw(rows: int) -> Dataset:
        x = rng.standard_normal((rows, spec.m))
        y = x @ w_target.T
        if spec.noise_sigma > 0:
            y = y + spec.noise_sigma * rng.standard_normal(y.shape)
        return Dataset(x=x, y=y)

    dataset = draw(spec.num_samples)
    eval_dataset = draw(max(1, spec.num_samples // 4))
    logger.info(f"Generated planted task {spec.n}x{spec.m}, k_true={spec.k_true}, rank_true={spec.rank_true}")
    return PlantedTask(w_base=w_base, w_target=w_target, dataset=dataset, eval_dataset=eval_dataset)


@dataclass
class AdamState:
    """First and second moment estimates per parameter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    t: int,
    lr_t: float,
    cfg: TrainConfig,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One AdamW update at step t >= 1, with weight decay applied to the
    parameters directly rather than through the moments.
    """
    if t < 1:
        raise ConfigError(f"AdamW step index must be >= 1, got {t}")
    beta1, beta2 = cfg.betas
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    shrink = 1.0 - lr_t * cfg.weight_decay

    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = p * shrink - lr_t * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v)


def linear_schedule(step: int, total: int, warmup_ratio: float, base_lr: float) -> float:
    """Linear ramp 0 -> base_lr over the warmup steps, then linear decay to 0 at total"""
    if not 0 <= step <= total:
        raise ConfigError(f"schedule step {step} outside [0, {total}]")
    warmup = math.floor(warmup_ratio * total)
    if step < warmup:
        return base_lr * step / warmup
    return base_lr * (total - step) / max(1, total - warmup)


class RunResult(BaseModel):
    final_train_loss: float
    final_eval_loss: float
    loss_curve: List[float]
    trainable_params: int
    wall_time_s: float
    config_echo: Dict[str, Any]


def mse(adapter: SpecLoraAdapter, data: Dataset) -> float:
    residual = adapter.forward(data.x, Mode.EVAL) - data.y
    return float(np.mean(residual * residual))


def _check_dataset(w_base: DenseMatrix, data: Dataset, name: str):
    n, m = w_base.shape
    if data.x.ndim != 2 or data.x.shape[1] != m:
        raise DimensionError(f"{name} inputs have shape {data.x.shape}, expected (*, {m})")
    if data.y.shape != (data.x.shape[0], n):
        raise DimensionError(f"{name} targets have shape {data.y.shape}, expected {(data.x.shape[0], n)}")


def train_adapter(
    w_base: DenseMatrix,
    dataset: Dataset,
    acfg: AdapterConfig,
    tcfg: TrainConfig,
    eval_dataset: Optional[Dataset] = None,
) -> Tuple[SpecLoraAdapter, RunResult]:
    """
    Fit (d, A, B) by mini-batch MSE regression with w_base frozen.

    Raises:
        ConfigError: adapter does not fit w_base, or warmup covers every step
        DimensionError: dataset shapes disagree with w_base
        NumericError: the loss became non-finite (carries the step)
    """
    w_base = as_matrix(w_base, "w_base")
    eval_dataset = eval_dataset or dataset
    _check_dataset(w_base, dataset, "training")
    _check_dataset(w_base, eval_dataset, "evaluation")

    started = time.perf_counter()
    adapter = SpecLoraAdapter.init(w_base, acfg)
    num_samples = len(dataset)
    total = tcfg.total_steps(num_samples)
    if total > 0 and tcfg.warmup_steps(total) >= total:
        raise ConfigError(f"warmup of {tcfg.warmup_steps(total)} steps leaves no training steps")

    logger.info(
        f"Training {acfg.variant.value}/{acfg.direction.value} adapter "
        f"(r={acfg.rank}, k={acfg.k}) for {tcfg.epochs} epochs, {total} steps"
    )

    params = adapter.parameters()
    state = AdamState.zeros_like(params)
    shuffler = np.random.default_rng(tcfg.seed)
    loss_curve: List[float] = []
    train_loss = mse(adapter, dataset)
    t = 0

    for epoch in range(tcfg.epochs):
        order = shuffler.permutation(num_samples)
        for start in range(0, num_samples, tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            x = dataset.x[batch]
            y = dataset.y[batch]

            residual = adapter.forward(x, Mode.TRAIN) - y
            batch_loss = float(np.mean(residual * residual))
            if not math.isfinite(batch_loss):
                raise NumericError(f"loss diverged at step {t + 1}", step=t + 1)
            grads = adapter.backward(x, 2.0 * residual / residual.size, Mode.TRAIN)

            t += 1
            lr_t = linear_schedule(t, total, tcfg.warmup_ratio, tcfg.learning_rate)
            params, state = adamw_step(params, grads.as_dict(), state, t, lr_t, tcfg)
            adapter = adapter.with_parameters(params, step=t)

        train_loss = mse(adapter, dataset)
        if not math.isfinite(train_loss):
            raise NumericError(f"loss diverged at step {t}", step=t)
        loss_curve.append(train_loss)
        logger.debug(f"epoch {epoch + 1}/{tcfg.epochs}: train loss {train_loss:.6e}")

    eval_loss = mse(adapter, eval_dataset)
    elapsed = time.perf_counter() - started
    if not ConfigManager.get_bool("SPECLORA_RECORD_WALL_TIME"):
        elapsed = 0.0

    n, m = w_base.shape
    result = RunResult(
        final_train_loss=train_loss,
        final_eval_loss=eval_loss,
        loss_curve=loss_curve,
        trainable_params=adapter.trainable_parameters,
        wall_time_s=elapsed,
        config_echo={
            "adapter": acfg.model_dump(mode="json"),
            "train": tcfg.model_dump(mode="json"),
            "n": n,
            "m": m,
            "num_samples": num_samples,
            "total_steps": total,
        },
    )
    logger.info(f"Finished training: train loss {train_loss:.6e}, eval loss {eval_loss:.6e}")
    return adapter, result


class AblationKind(str, Enum):
    K_SWEEP = "k_sweep"
    RANK_SWEEP = "rank_sweep"
    DIRECTION = "direction"


ABLATION_FIELDS = {
    AblationKind.K_SWEEP: "k",
    AblationKind.RANK_SWEEP: "rank",
    AblationKind.DIRECTION: "direction",
}

RESULT_COLUMNS = [
    "kind",
    "grid_value",
    "seed",
    "trainable_params",
    "final_train_loss",
    "final_eval_loss",
    "wall_time_s",
]


class AblationRow(BaseModel):
    kind: AblationKind
    grid_value: str
    seed: int
    trainable_params: int
    final_train_loss: float
    final_eval_loss: float
    wall_time_s: float
    result: RunResult

    def csv_row(self) -> Dict[str, Any]:
        row = self.model_dump(mode="json", include=set(RESULT_COLUMNS))
        return {column: row[column] for column in RESULT_COLUMNS}


def _run_point(args) -> AblationRow:
    kind, value, seed, task, acfg, tcfg = args
    _, result = train_adapter(task.w_base, task.dataset, acfg, tcfg, task.eval_dataset)
    logger.info(f"{kind.value}={value} seed={seed}: final train loss {result.final_train_loss:.6e}")
    return AblationRow(
        kind=kind,
        grid_value=value.value if isinstance(value, Enum) else str(value),
        seed=seed,
        trainable_params=result.trainable_params,
        final_train_loss=result.final_train_loss,
        final_eval_loss=result.final_eval_loss,
        wall_time_s=result.wall_time_s,
        result=result,
    )


def run_ablation(
    kind: AblationKind,
    grid: Sequence[Any],
    task: PlantedTask,
    acfg: AdapterConfig,
    tcfg: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    jobs: int = 1,
) -> List[AblationRow]:
    """
    One training run per (grid value, seed). Each seed sets both the adapter
    and the training seed; rows come back in grid order, then seed order.
    """
    kind = AblationKind(kind)
    if not grid:
        raise ConfigError("ablation grid is empty")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")

    field_name = ABLATION_FIELDS[kind]
    points = []
    for value in grid:
        for seed in seeds:
            point_acfg = build(AdapterConfig, {**acfg.model_dump(), field_name: value, "seed": seed})
            point_tcfg = build(TrainConfig, {**tcfg.model_dump(), "seed": seed})
            points.append((kind, value, seed, task, point_acfg, point_tcfg))

    logger.info(f"Running {kind.value} ablation: {len(grid)} grid values x {len(seeds)} seeds, jobs={jobs}")
    if jobs <= 1:
        return [_run_point(point) for point in points]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(_run_point, points))
