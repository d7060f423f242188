"""
Spectral Low-Rank Adapter

A frozen weight W (n x m) plus trainable parameters:
  - d (length k): rescales k singular directions of W
  - A (n x r), B (r x m): low-rank residual scaled by alpha / r

Two formulations of the rescale are supported:
  - hadamard:  W_eff = (Gamma o W) + s A B, Gamma holding k column-copies of d
    in its top-left (or bottom-right) k x k block
  - svd_exact: W_eff = W + RowEmbed((diag(d) - I) M) + s A B, where
    M = U[rows, dirs] diag(sigma[dirs]) V[:, dirs]^T is precomputed once,
    which equals replacing the first k rows of the top-k left singular
    vectors by D times themselves.

Outputs follow y = x W_eff^T for a batch x of shape (batch, m).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .configs import AdapterConfig, Direction, Mode, Variant
from .errors import DimensionError
from .linalg import DenseMatrix, Vector, as_matrix, as_vector, thin_svd

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("d", "a", "b")


def build_mask(n: int, m: int, k: int, d, direction: Direction = Direction.TOP) -> DenseMatrix:
    """
    Spectral modulation mask Gamma (n x m).

    For direction=top the block Gamma[:k, :k] holds d broadcast along columns;
    for direction=bottom the block Gamma[n-k:, m-k:] does. Everything else is 1.
    """
    d = as_vector(d, "d")
    if d.size != k:
        raise DimensionError(f"d has length {d.size}, expected k = {k}")
    if k > min(n, m):
        raise DimensionError(f"k = {k} exceeds min(n, m) = {min(n, m)}")

    mask = np.ones((n, m))
    if k == 0:
        return mask
    if Direction(direction) is Direction.TOP:
        mask[:k, :k] = d[:, None]
    else:
        mask[n - k:, m - k:] = d[:, None]
    return mask


def rescale_singular_values(w: DenseMatrix, d, direction: Direction = Direction.TOP) -> DenseMatrix:
    """
    Exact spectral rescale: sigma_i -> d_i * sigma_i on the top-k (or bottom-k)
    triplets, applied as an additive update so d = 1 returns w unchanged.
    """
    w = as_matrix(w, "w")
    d = as_vector(d, "d")
    k = d.size
    p = min(w.shape)
    if k > p:
        raise DimensionError(f"cannot rescale {k} directions of a rank-{p} factorization")
    if k == 0:
        return np.array(w, copy=True)

    factors = thin_svd(w)
    dirs = slice(0, k) if Direction(direction) is Direction.TOP else slice(p - k, p)
    delta = (factors.u[:, dirs] * ((d - 1.0) * factors.sigma[dirs])) @ factors.v[:, dirs].T
    return w + delta


def _spectral_block(w: DenseMatrix, k: int, direction: Direction) -> DenseMatrix:
    """M = U[rows, dirs] diag(sigma[dirs]) V[:, dirs]^T  (k x m)"""
    n, m = w.shape
    if k == 0:
        return np.zeros((0, m))
    factors = thin_svd(w)
    p = factors.sigma.size
    if Direction(direction) is Direction.TOP:
        rows, dirs = slice(0, k), slice(0, k)
    else:
        rows, dirs = slice(n - k, n), slice(p - k, p)
    return (factors.u[rows, dirs] * factors.sigma[dirs]) @ factors.v[:, dirs].T


@dataclass(frozen=True)
class AdapterGradients:
    grad_d: Vector
    grad_a: DenseMatrix
    grad_b: DenseMatrix

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"d": self.grad_d, "a": self.grad_a, "b": self.grad_b}


@dataclass
class SpecLoraAdapter:
    """
    Frozen base weight plus trainable (d, A, B).

    w_frozen and m_cached are stored read-only. step is the dropout counter:
    forward and backward at the same step draw the same mask.
    """

    w_frozen: DenseMatrix
    d: Vector
    a: DenseMatrix
    b: DenseMatrix
    config: AdapterConfig
    m_cached: Optional[DenseMatrix] = None
    step: int = field(default=0)

    @classmethod
    def init(
        cls, w: DenseMatrix, config: AdapterConfig, m_cached: Optional[DenseMatrix] = None
    ) -> "SpecLoraAdapter":
        """
        Identity-at-init adapter: d = 1, B = 0, A ~ U(-sqrt(6/r), sqrt(6/r)).

        For svd_exact a stored m_cached (k x m) replaces the SVD of w.

        Raises:
            ConfigError: r or k do not fit the shape of w
            DimensionError: m_cached is not k x m
        """
        w_frozen = np.array(as_matrix(w, "w"), copy=True)
        n, m = w_frozen.shape
        config.check_shape(n, m)
        w_frozen.setflags(write=False)

        r = config.rank
        rng = np.random.default_rng(config.seed)
        bound = np.sqrt(6.0 / r)
        a = rng.uniform(-bound, bound, size=(n, r))

        if config.variant is not Variant.SVD_EXACT:
            m_cached = None
        elif m_cached is None:
            m_cached = _spectral_block(w_frozen, config.k, config.direction)
            m_cached.setflags(write=False)
        else:
            m_cached = np.array(as_matrix(m_cached, "m_cached"), copy=True)
            if m_cached.shape != (config.k, m):
                raise DimensionError(f"m_cached has shape {m_cached.shape}, expected {(config.k, m)}")
            m_cached.setflags(write=False)

        logger.debug(
            f"Initialized {config.variant.value}/{config.direction.value} adapter "
            f"on {n}x{m} weight with r={r}, k={config.k}"
        )
        return cls(
            w_frozen=w_frozen,
            d=np.ones(config.k),
            a=a,
            b=np.zeros((r, m)),
            config=config,
            m_cached=m_cached,
        )

    @property
    def shape(self):
        return self.w_frozen.shape

    @property
    def scale(self) -> float:
        return self.config.scale

    @property
    def trainable_parameters(self) -> int:
        return self.d.size + self.a.size + self.b.size

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"d": self.d, "a": self.a, "b": self.b}

    def with_parameters(self, params: Dict[str, np.ndarray], step: Optional[int] = None) -> "SpecLoraAdapter":
        """New adapter sharing the frozen state, with replaced trainables"""
        for name in PARAMETER_NAMES:
            if params[name].shape != getattr(self, name).shape:
                raise DimensionError(
                    f"parameter {name} has shape {params[name].shape}, expected {getattr(self, name).shape}"
                )
        return replace(
            self,
            d=params["d"],
            a=params["a"],
            b=params["b"],
            step=self.step if step is None else step,
        )

    def _row_slice(self) -> slice:
        n = self.w_frozen.shape[0]
        k = self.config.k
        if self.config.direction is Direction.TOP:
            return slice(0, k)
        return slice(n - k, n)

    def base_weight(self) -> DenseMatrix:
        """The non-LoRA part of the effective weight"""
        n, m = self.w_frozen.shape
        k = self.config.k
        if self.config.variant is Variant.HADAMARD:
            return build_mask(n, m, k, self.d, self.config.direction) * self.w_frozen
        base = np.array(self.w_frozen, copy=True)
        if k:
            base[self._row_slice()] += (self.d - 1.0)[:, None] * self.m_cached
        return base

    def effective_weight(self) -> DenseMatrix:
        return self.base_weight() + self.scale * (self.a @ self.b)

    def merge(self) -> DenseMatrix:
        """Fold every trainable into one dense weight for deployment"""
        return self.effective_weight()

    def _lora_input(self, x: DenseMatrix, mode: Mode) -> DenseMatrix:
        p = self.config.dropout_p
        if Mode(mode) is Mode.EVAL or p == 0.0:
            return x
        # counter-based stream: one independent block of 2**64 counters per step
        generator = np.random.Generator(np.random.Philox(key=self.config.seed, counter=self.step << 64))
        keep = generator.random(x.shape) >= p
        return x * keep / (1.0 - p)

    def _check_input(self, x) -> DenseMatrix:
        x = as_matrix(x, "x", check_finite=False)
        if x.shape[1] != self.w_frozen.shape[1]:
            raise DimensionError(f"input has {x.shape[1]} features, weight expects {self.w_frozen.shape[1]}")
        return x

    def forward(self, x: DenseMatrix, mode: Mode = Mode.EVAL) -> DenseMatrix:
        """y = x base^T + s (x' B^T) A^T, x' being x after dropout in train mode"""
        x = self._check_input(x)
        x_lora = self._lora_input(x, mode)
        return x @ self.base_weight().T + self.scale * ((x_lora @ self.b.T) @ self.a.T)

    def backward(self, x: DenseMatrix, g_y: DenseMatrix, mode: Mode = Mode.TRAIN) -> AdapterGradients:
        """
        Gradients of a loss L given g_y = dL/dy for the forward pass at the same step.
        """
        x = self._check_input(x)
        g_y = as_matrix(g_y, "g_y", check_finite=False)
        n, m = self.w_frozen.shape
        if g_y.shape != (x.shape[0], n):
            raise DimensionError(f"upstream gradient has shape {g_y.shape}, expected {(x.shape[0], n)}")

        k = self.config.k
        s = self.scale
        x_lora = self._lora_input(x, mode)

        rows = self._row_slice()
        if k == 0:
            grad_d = np.zeros(0)
        elif self.config.variant is Variant.HADAMARD:
            cols = slice(0, k) if self.config.direction is Direction.TOP else slice(m - k, m)
            g_block = g_y[:, rows].T @ x[:, cols]
            grad_d = np.sum(g_block * self.w_frozen[rows, cols], axis=1)
        else:
            grad_d = np.sum(g_y[:, rows] * (x @ self.m_cached.T), axis=0)

        grad_a = s * (g_y.T @ (x_lora @ self.b.T))
        grad_b = s * ((g_y @ self.a).T @ x_lora)
        return AdapterGradients(grad_d=grad_d, grad_a=grad_a, grad_b=grad_b)
