"""
Dense Linear Algebra Kernel

Real 64-bit dense matrices, products, norms, and a deterministic thin SVD
(one-sided Jacobi) with a fixed sign convention. Everything here is a pure
function of its inputs.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import numpy.typing as npt

from .errors import DimensionError, DomainError, NumericError

logger = logging.getLogger(__name__)

DenseMatrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

# Columns are considered orthogonal once |cos| between every pair drops below this
JACOBI_TOL = 1e-13
SWEEPS_PER_COLUMN = 100


@dataclass(frozen=True)
class SvdFactors:
    """
    Thin SVD w = u @ diag(sigma) @ v.T.

    u is n x p, sigma has length p = min(n, m) sorted non-increasing, v is m x p.
    In every column of u the entry of largest magnitude (first one on ties) is
    non-negative; v's column signs follow u's.
    """

    u: DenseMatrix
    sigma: Vector
    v: DenseMatrix

    def reconstruct(self) -> DenseMatrix:
        return (self.u * self.sigma) @ self.v.T


def as_matrix(data, name: str = "matrix", check_finite: bool = True) -> DenseMatrix:
    """
    Coerce array-like data to a 2-D float64 matrix.

    Raises:
        DimensionError: data is not two-dimensional
        DomainError: check_finite and some entry is NaN or infinite
    """
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {matrix.shape}")
    if check_finite and not np.all(np.isfinite(matrix)):
        raise DomainError(f"{name} contains non-finite entries")
    return matrix


def as_vector(data, name: str = "vector") -> Vector:
    vector = np.asarray(data, dtype=np.float64)
    if vector.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {vector.shape}")
    return vector


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Matrix product with an explicit shape check"""
    a = as_matrix(a, "a", check_finite=False)
    b = as_matrix(b, "b", check_finite=False)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(w: DenseMatrix) -> float:
    return float(np.linalg.norm(np.asarray(w, dtype=np.float64)))


def cosine(a: Vector, b: Vector) -> float:
    """
    Cosine similarity <a, b> / (|a| |b|), clipped to [-1, 1].

    Raises:
        DimensionError: lengths differ
        DomainError: either vector is zero
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"cosine of vectors with lengths {a.size} and {b.size}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DomainError("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def orthonormality_error(q: DenseMatrix) -> float:
    """max |q.T q - I|"""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))


def _round_robin(p: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: p-1 (or p) rounds of disjoint column pairs"""
    players = list(range(p)) + ([-1] if p % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        left, right = [], []
        for i in range(size // 2):
            x, y = players[i], players[size - 1 - i]
            if x >= 0 and y >= 0:
                left.append(min(x, y))
                right.append(max(x, y))
        rounds.append((np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_diagonal_mass(work: DenseMatrix) -> float:
    gram = work.T @ work
    norms = np.sqrt(np.diag(gram))
    scale = np.outer(norms, norms)
    scale[scale == 0.0] = 1.0
    off = np.abs(gram / scale)
    np.fill_diagonal(off, 0.0)
    return float(off.max()) if off.size else 0.0


def _jacobi_orthogonalize(work: DenseMatrix, max_sweeps: int) -> DenseMatrix:
    """
    Rotate the columns of work (in place) until they are mutually orthogonal.
    Returns the accumulated rotation.
    """
    p = work.shape[1]
    rotation = np.eye(p)
    schedule = _round_robin(p)

    for sweep in range(max_sweeps):
        rotated = False
        for left, right in schedule:
            if left.size == 0:
                continue
            ap = work[:, left]
            aq = work[:, right]
            alpha = np.sum(ap * ap, axis=0)
            beta = np.sum(aq * aq, axis=0)
            gamma = np.sum(ap * aq, axis=0)

            active = np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True

            zeta = np.zeros_like(gamma)
            np.divide(beta - alpha, 2.0 * gamma, out=zeta, where=active)
            t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(active, c * t, 0.0)

            work[:, left] = c * ap - s * aq
            work[:, right] = s * ap + c * aq
            vp = rotation[:, left]
            vq = rotation[:, right]
            rotation[:, left] = c * vp - s * vq
            rotation[:, right] = s * vp + c * vq

        if not rotated:
            logger.debug(f"Jacobi converged after {sweep + 1} sweeps on {p} columns")
            return rotation

    residual = _off_diagonal_mass(work)
    raise NumericError(
        f"one-sided Jacobi did not converge in {max_sweeps} sweeps", residual=residual
    )


def _complete_basis(q: DenseMatrix, filled: np.ndarray) -> DenseMatrix:
    """Replace the columns of q not marked in filled by an orthonormal completion"""
    rows = q.shape[0]
    basis = [q[:, j] for j in np.flatnonzero(filled)]
    for j in np.flatnonzero(~filled):
        candidates = np.eye(rows)
        for _ in range(2):
            for b in basis:
                candidates -= np.outer(candidates @ b, b)
        norms = np.linalg.norm(candidates, axis=1)
        best = int(np.argmax(norms))
        column = candidates[best] / norms[best]
        q[:, j] = column
        basis.append(column)
    return q


def _apply_sign_convention(u: DenseMatrix, v: DenseMatrix):
    if u.shape[1] == 0:
        return
    pivots = np.argmax(np.abs(u), axis=0)
    flip = u[pivots, np.arange(u.shape[1])] < 0.0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0


def thin_svd(w: DenseMatrix) -> SvdFactors:
    """
    Deterministic thin SVD by one-sided (Hestenes) Jacobi.

    The longer dimension is kept as rows; columns are orthogonalized with a
    round-robin schedule so each round rotates disjoint pairs at once.

    Raises:
        DomainError: w has non-finite entries
        NumericError: no convergence within 100 * min(n, m) sweeps
    """
    a = as_matrix(w, "w")
    n, m = a.shape
    p = min(n, m)
    if p == 0:
        return SvdFactors(u=np.zeros((n, 0)), sigma=np.zeros(0), v=np.zeros((m, 0)))

    transposed = n < m
    work = np.array(a.T if transposed else a, dtype=np.float64, copy=True)
    rotation = _jacobi_orthogonalize(work, SWEEPS_PER_COLUMN * p)

    sigma = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    rotation = rotation[:, order]

    # columns whose norm is at rounding level carry no direction
    floor = sigma[0] * max(n, m) * np.finfo(np.float64).eps
    filled = sigma > floor
    directions = np.zeros_like(work)
    directions[:, filled] = work[:, filled] / sigma[filled]
    if not filled.all():
        directions = _complete_basis(directions, filled)

    if transposed:
        u, v = rotation, directions
    else:
        u, v = directions, rotation
    _apply_sign_convention(u, v)
    return SvdFactors(u=u, sigma=sigma, v=v)
