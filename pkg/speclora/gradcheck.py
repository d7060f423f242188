"""
Finite-difference verification of the adapter's analytic backward pass.

Each case draws a small random adapter (both variants, both directions,
dropout 0), takes L = 0.5 * ||y||^2 and compares every gradient component
with a central difference.
"""

import itertools
import logging
from typing import Dict, List

import numpy as np
from pydantic import BaseModel

from .adapter import SpecLoraAdapter
from .configs import AdapterConfig, Direction, Mode, Variant
from .errors import ConfigError

logger = logging.getLogger(__name__)

STEP = 1e-6
TOLERANCE = 1e-5
# components below this fraction of the largest gradient are compared absolutely
MAGNITUDE_FLOOR = 1e-3

COMBINATIONS = list(itertools.product(Variant, Direction))


class CaseResult(BaseModel):
    case: int
    variant: Variant
    direction: Direction
    n: int
    m: int
    rank: int
    k: int
    batch: int
    max_rel_error: float
    worst_parameter: str


class GradcheckResult(BaseModel):
    seed: int
    max_rel_error: float
    tolerance: float
    cases: List[CaseResult]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def half_squared_norm(adapter: SpecLoraAdapter, x: np.ndarray) -> float:
    y = adapter.forward(x, Mode.TRAIN)
    return 0.5 * float(np.sum(y * y))


def numeric_gradients(adapter: SpecLoraAdapter, x: np.ndarray, h: float = STEP) -> Dict[str, np.ndarray]:
    """Central differences of 0.5 * ||y||^2 with respect to d, A and B"""
    params = adapter.parameters()
    numeric = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            shifted = {key: p.copy() for key, p in params.items()}
            shifted[name][index] = value[index] + h
            loss_plus = half_squared_norm(adapter.with_parameters(shifted), x)
            shifted[name][index] = value[index] - h
            loss_minus = half_squared_norm(adapter.with_parameters(shifted), x)
            grad[index] = (loss_plus - loss_minus) / (2.0 * h)
        numeric[name] = grad
    return numeric


def relative_error(analytic: np.ndarray, numeric: np.ndarray, magnitude: float = 1.0) -> float:
    if analytic.size == 0:
        return 0.0
    floor = MAGNITUDE_FLOOR * max(magnitude, 1.0)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def random_adapter(rng: np.random.Generator, variant: Variant, direction: Direction, seed: int):
    n = int(rng.integers(2, 9))
    m = int(rng.integers(2, 9))
    limit = min(n, m)
    rank = int(rng.integers(1, min(3, limit) + 1))
    k = int(rng.integers(0, min(4, limit) + 1))
    cfg = AdapterConfig(
        rank=rank,
        alpha=float(rng.uniform(0.5, 4.0)),
        k=k,
        dropout_p=0.0,
        variant=variant,
        direction=direction,
        seed=seed,
    )
    adapter = SpecLoraAdapter.init(rng.standard_normal((n, m)) / np.sqrt(m), cfg)
    # move away from the identity point so every gradient path is live
    return adapter.with_parameters(
        {
            "d": rng.uniform(0.5, 1.5, size=k),
            "a": adapter.a,
            "b": 0.5 * rng.standard_normal((rank, m)),
        }
    )


def run_gradcheck(seed: int = 0, cases: int = 20, corrupt: bool = False) -> GradcheckResult:
    """
    Run the finite-difference suite.

    corrupt perturbs one analytic gradient component; used as a negative
    control to prove the check can fail.
    """
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a non-negative 64-bit integer, got {seed}")
    if cases < 1:
        raise ConfigError(f"gradcheck needs at least one case, got {cases}")

    results = []
    for case in range(cases):
        variant, direction = COMBINATIONS[case % len(COMBINATIONS)]
        rng = np.random.default_rng([seed, case])
        adapter = random_adapter(rng, variant, direction, seed)
        batch = int(rng.integers(1, 5))
        x = rng.standard_normal((batch, adapter.shape[1]))

        y = adapter.forward(x, Mode.TRAIN)
        analytic = adapter.backward(x, y, Mode.TRAIN).as_dict()
        if corrupt:
            analytic["a"] = analytic["a"].copy()
            analytic["a"][0, 0] += 1.0
        numeric = numeric_gradients(adapter, x)

        magnitude = max(float(np.max(np.abs(g), initial=0.0)) for g in numeric.values())
        errors = {name: relative_error(analytic[name], numeric[name], magnitude) for name in analytic}
        worst = max(errors, key=errors.get)
        n, m = adapter.shape
        results.append(
            CaseResult(
                case=case,
                variant=variant,
                direction=direction,
                n=n,
                m=m,
                rank=adapter.config.rank,
                k=adapter.config.k,
                batch=batch,
                max_rel_error=errors[worst],
                worst_parameter=worst,
            )
        )
        logger.debug(f"case {case} ({variant.value}/{direction.value}): max rel error {errors[worst]:.3e}")

    max_error = max(result.max_rel_error for result in results)
    logger.info(f"Gradient check over {cases} cases: max relative error {max_error:.3e}")
    return GradcheckResult(seed=seed, max_rel_error=max_error, tolerance=TOLERANCE, cases=results)
