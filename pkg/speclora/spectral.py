"""
Spectral Analysis of Weight Pairs

Compares a pre-trained weight with its fine-tuned counterpart: singular value
ratios per index, per-index singular-vector alignment, and entropy-based
summaries of each spectrum.
"""

import fnmatch
import logging
import math
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, field_serializer, field_validator
from scipy.stats import entropy

from .errors import DimensionError, DomainError
from .linalg import DenseMatrix, SvdFactors, Vector, as_matrix, as_vector, frobenius_norm, thin_svd

logger = logging.getLogger(__name__)

RATIO_SENTINEL = "inf"
RATIO_FLOOR = 1e-12
DEGENERACY_GAP = 1e-8


class SpectralReport(BaseModel):
    """Per-index comparison of a (pre-trained, fine-tuned) weight pair"""

    matrix_name: str
    sigma_pre: List[float]
    sigma_ft: List[float]
    sigma_ratio: List[float]
    left_alignment: List[float]
    right_alignment: List[float]
    effective_rank_pre: float
    effective_rank_ft: float
    spectral_entropy_pre: float
    spectral_entropy_ft: float
    left_cosine: List[float] = []
    right_cosine: List[float] = []
    degenerate_indices: List[int] = []

    @field_validator("sigma_ratio", mode="before")
    @classmethod
    def _parse_sentinel(cls, values):
        return [math.inf if v == RATIO_SENTINEL else v for v in values]

    @field_serializer("sigma_ratio")
    def _emit_sentinel(self, values: List[float]) -> List[Any]:
        return [RATIO_SENTINEL if math.isinf(v) else v for v in values]

    def csv_rows(self) -> List[Dict[str, Any]]:
        """One row per singular index"""
        degenerate = set(self.degenerate_indices)
        ratios = self.model_dump()["sigma_ratio"]
        return [
            {
                "matrix_name": self.matrix_name,
                "index": i,
                "sigma_pre": self.sigma_pre[i],
                "sigma_ft": self.sigma_ft[i],
                "sigma_ratio": ratios[i],
                "left_alignment": self.left_alignment[i],
                "right_alignment": self.right_alignment[i],
                "degenerate": int(i in degenerate),
            }
            for i in range(len(self.sigma_pre))
        ]


CSV_FIELDS = [
    "matrix_name",
    "index",
    "sigma_pre",
    "sigma_ft",
    "sigma_ratio",
    "left_alignment",
    "right_alignment",
    "degenerate",
]


def _check_spectrum(sigma) -> Vector:
    sigma = as_vector(sigma, "sigma")
    if np.any(sigma < 0.0) or not np.all(np.isfinite(sigma)):
        raise DomainError("singular values must be finite and non-negative")
    if not np.any(sigma > 0.0):
        raise DomainError("spectrum has no positive singular value")
    return sigma


def spectral_entropy(sigma) -> float:
    """Shannon entropy (nats) of sigma normalized to a probability vector"""
    sigma = _check_spectrum(sigma)
    return float(entropy(sigma))


def effective_rank(sigma) -> float:
    """exp(spectral_entropy), clipped to [1, len(sigma)]"""
    sigma = _check_spectrum(sigma)
    return float(np.clip(math.exp(spectral_entropy(sigma)), 1.0, sigma.size))


def signed_alignment(f_pre: SvdFactors, f_ft: SvdFactors) -> Tuple[Vector, Vector]:
    """Raw per-index cosines between corresponding singular vectors"""
    if f_pre.u.shape != f_ft.u.shape or f_pre.v.shape != f_ft.v.shape:
        raise DimensionError(
            f"factor shapes differ: u {f_pre.u.shape} vs {f_ft.u.shape}, "
            f"v {f_pre.v.shape} vs {f_ft.v.shape}"
        )

    def per_column(x: DenseMatrix, y: DenseMatrix) -> Vector:
        norms = np.linalg.norm(x, axis=0) * np.linalg.norm(y, axis=0)
        if np.any(norms == 0.0):
            raise DomainError("singular vector with zero norm")
        return np.clip(np.sum(x * y, axis=0) / norms, -1.0, 1.0)

    return per_column(f_pre.u, f_ft.u), per_column(f_pre.v, f_ft.v)


def vector_alignment(f_pre: SvdFactors, f_ft: SvdFactors) -> Tuple[Vector, Vector]:
    """|cos| between same-index left and right singular vectors"""
    left, right = signed_alignment(f_pre, f_ft)
    return np.abs(left), np.abs(right)


def degenerate_indices(sigma: Vector) -> List[int]:
    """Indices whose gap to a neighbouring singular value is below 1e-8 * sigma_1"""
    sigma = as_vector(sigma, "sigma")
    if sigma.size < 2:
        return []
    threshold = DEGENERACY_GAP * sigma[0]
    gaps = np.abs(np.diff(sigma))
    flagged = np.zeros(sigma.size, dtype=bool)
    flagged[:-1] |= gaps < threshold
    flagged[1:] |= gaps < threshold
    return [int(i) for i in np.flatnonzero(flagged)]


def compare_spectra(w_pre: DenseMatrix, w_ft: DenseMatrix, matrix_name: str = "matrix") -> SpectralReport:
    """
    Analyze how a fine-tuned weight differs from its pre-trained version.

    Raises:
        DimensionError: the two weights have different shapes
        DomainError: either weight is all zeros
    """
    w_pre = as_matrix(w_pre, "w_pre")
    w_ft = as_matrix(w_ft, "w_ft")
    if w_pre.shape != w_ft.shape:
        raise DimensionError(f"{matrix_name}: pre shape {w_pre.shape} != ft shape {w_ft.shape}")

    f_pre = thin_svd(w_pre)
    f_ft = thin_svd(w_ft)

    ratio = np.full(f_pre.sigma.shape, math.inf)
    finite = f_pre.sigma >= RATIO_FLOOR
    ratio[finite] = f_ft.sigma[finite] / f_pre.sigma[finite]

    left_cos, right_cos = signed_alignment(f_pre, f_ft)
    flagged = sorted(set(degenerate_indices(f_pre.sigma)) | set(degenerate_indices(f_ft.sigma)))

    report = SpectralReport(
        matrix_name=matrix_name,
        sigma_pre=f_pre.sigma.tolist(),
        sigma_ft=f_ft.sigma.tolist(),
        sigma_ratio=ratio.tolist(),
        left_alignment=np.abs(left_cos).tolist(),
        right_alignment=np.abs(right_cos).tolist(),
        effective_rank_pre=effective_rank(f_pre.sigma),
        effective_rank_ft=effective_rank(f_ft.sigma),
        spectral_entropy_pre=spectral_entropy(f_pre.sigma),
        spectral_entropy_ft=spectral_entropy(f_ft.sigma),
        left_cosine=left_cos.tolist(),
        right_cosine=right_cos.tolist(),
        degenerate_indices=flagged,
    )
    logger.debug(
        f"{matrix_name}: effective rank {report.effective_rank_pre:.3f} -> {report.effective_rank_ft:.3f}"
    )
    return report


def analyze_pairs(
    pre: Mapping[str, DenseMatrix],
    ft: Mapping[str, DenseMatrix],
    pattern: str = "*",
) -> List[SpectralReport]:
    """
    Compare every tensor present in both maps whose name matches pattern.
    Reports come back sorted by tensor name.
    """
    names = sorted(name for name in set(pre) & set(ft) if fnmatch.fnmatchcase(name, pattern))
    logger.info(f"Analyzing {len(names)} tensor pairs matching '{pattern}'")
    return [compare_spectra(pre[name], ft[name], matrix_name=name) for name in names]


def spectrum_summary(w: DenseMatrix) -> Dict[str, float]:
    """Scalar information metrics of a single matrix"""
    sigma = thin_svd(w).sigma
    return {
        "sigma_max": float(sigma[0]) if sigma.size else 0.0,
        "frobenius_norm": frobenius_norm(w),
        "spectral_entropy": spectral_entropy(sigma),
        "effective_rank": effective_rank(sigma),
    }
