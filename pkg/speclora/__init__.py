"""
speclora

Spectral low-rank adaptation: a frozen weight whose top-k singular directions
are rescaled by a learnable vector, combined with a low-rank residual, plus
the spectral analysis used to study fine-tuned weights.
"""

from .adapter import AdapterGradients, SpecLoraAdapter, build_mask, rescale_singular_values
from .configs import AdapterConfig, Direction, Mode, TaskSpec, TrainConfig, Variant
from .linalg import SvdFactors, cosine, frobenius_norm, matmul, thin_svd
from .spectral import (
    SpectralReport,
    compare_spectra,
    effective_rank,
    spectral_entropy,
    vector_alignment,
)
from .train import RunResult, gen_planted_task, run_ablation, train_adapter

__all__ = [
    "AdapterConfig",
    "AdapterGradients",
    "Direction",
    "Mode",
    "RunResult",
    "SpecLoraAdapter",
    "SpectralReport",
    "SvdFactors",
    "TaskSpec",
    "TrainConfig",
    "Variant",
    "build_mask",
    "compare_spectra",
    "cosine",
    "effective_rank",
    "frobenius_norm",
    "gen_planted_task",
    "matmul",
    "rescale_singular_values",
    "run_ablation",
    "spectral_entropy",
    "thin_svd",
    "train_adapter",
    "vector_alignment",
]
