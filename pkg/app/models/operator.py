"""Forward operators A and the measurement process y = A(x) + eta."""
from __future__ import annotations

import logging
import math
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from app.utils.errors import InvalidArgumentError, InvalidDimensionError, InvalidValueError
from app.utils.tensor import RandomSource, Vector, as_vector

if TYPE_CHECKING:
    from app.models.config import OperatorConfig

logger = logging.getLogger(__name__)


class OperatorKind(str, Enum):
    identity = "identity"
    dense_gaussian = "dense_gaussian"
    inpaint_mask = "inpaint_mask"
    phaseless_gaussian = "phaseless_gaussian"
    circular_blur = "circular_blur"
    coded_phaseless = "coded_phaseless"


_LINEAR_KINDS = {
    OperatorKind.identity,
    OperatorKind.dense_gaussian,
    OperatorKind.inpaint_mask,
    OperatorKind.circular_blur,
}


class ForwardOperator(BaseModel):
    """Tagged measurement map R^n -> R^m.

    Payload by kind: ``matrix`` (dense_gaussian, phaseless_gaussian), ``mask``
    (inpaint_mask), ``kernel`` (circular_blur, coded_phaseless) and ``signs``
    (coded_phaseless). Blur kinds act on a ``side`` x ``side`` grid flattened
    row-major.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: OperatorKind
    m: int = Field(ge=1)
    n: int = Field(ge=1)
    seed: Optional[int] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    matrix: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    kernel: Optional[np.ndarray] = None
    signs: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_payload(self) -> "ForwardOperator":
        kind = self.kind
        if kind in (OperatorKind.dense_gaussian, OperatorKind.phaseless_gaussian):
            if self.matrix is None or self.matrix.shape != (self.m, self.n):
                raise InvalidDimensionError(f"{kind.value} needs an {self.m} x {self.n} matrix")
        elif kind == OperatorKind.inpaint_mask:
            if self.mask is None or self.mask.shape != (self.n,) or int(self.mask.sum()) != self.m:
                raise InvalidDimensionError("inpaint mask must have n entries with m kept")
        elif kind == OperatorKind.circular_blur:
            if self.kernel is None or abs(float(self.kernel.sum()) - 1.0) > 1e-12:
                raise InvalidValueError("blur kernel must sum to 1")
        elif kind == OperatorKind.coded_phaseless:
            if self.kernel is None or self.signs is None or self.signs.shape != (self.n,):
                raise InvalidDimensionError("coded_phaseless needs a kernel and n signs")
            if self.m > self.n:
                raise InvalidDimensionError("coded_phaseless keeps at most n outputs")
        elif self.m != self.n:
            raise InvalidDimensionError("identity operator must be square")
        return self

    @property
    def is_linear(self) -> bool:
        return self.kind in _LINEAR_KINDS

    @property
    def side(self) -> int:
        return int(self.params["side"])

    def _check_input(self, x) -> Vector:
        x = as_vector(x, "x")
        if x.shape[0] != self.n:
            raise InvalidDimensionError(f"{self.kind.value} expects length {self.n}, got {x.shape[0]}")
        return x

    def _convolve(self, x: Vector) -> Vector:
        image = x.reshape(self.side, self.side)
        return ndimage.convolve(image, self.kernel, mode="wrap").ravel()

    def _correlate(self, v: Vector) -> Vector:
        image = v.reshape(self.side, self.side)
        return ndimage.correlate(image, self.kernel, mode="wrap").ravel()

    def _linear_part(self, x: Vector) -> Vector:
        """The map before any magnitude (identity for the linear kinds' full map)."""
        kind = self.kind
        if kind == OperatorKind.identity:
            return x.copy()
        if kind in (OperatorKind.dense_gaussian, OperatorKind.phaseless_gaussian):
            return self.matrix @ x
        if kind == OperatorKind.inpaint_mask:
            return x[self.mask]
        if kind == OperatorKind.circular_blur:
            return self._convolve(x)
        return self._convolve(self.signs * x)[: self.m]

    def _linear_adjoint(self, v: Vector) -> Vector:
        kind = self.kind
        if kind == OperatorKind.identity:
            return v.copy()
        if kind in (OperatorKind.dense_gaussian, OperatorKind.phaseless_gaussian):
            return self.matrix.T @ v
        if kind == OperatorKind.inpaint_mask:
            out = np.zeros(self.n)
            out[self.mask] = v
            return out
        if kind == OperatorKind.circular_blur:
            return self._correlate(v)
        padded = np.zeros(self.n)
        padded[: self.m] = v
        return self.signs * self._correlate(padded)

    def apply(self, x) -> Vector:
        x = self._check_input(x)
        out = self._linear_part(x)
        if self.is_linear:
            return out
        return np.abs(out)

    def adjoint(self, v) -> Vector:
        if not self.is_linear:
            raise InvalidArgumentError(f"{self.kind.value} has no adjoint")
        v = as_vector(v, "v")
        if v.shape[0] != self.m:
            raise InvalidDimensionError(f"adjoint expects length {self.m}, got {v.shape[0]}")
        return self._linear_adjoint(v)

    def residual_gradient(self, x, y) -> Vector:
        """Gradient in x of ||y - A(x)||^2; for magnitude kinds the subgradient
        2 B^T((|Bx| - y) * sign(Bx)) with sign(0) = 0."""
        x = self._check_input(x)
        y = as_vector(y, "y")
        if y.shape[0] != self.m:
            raise InvalidDimensionError(f"y has length {y.shape[0]}, expected {self.m}")
        bx = self._linear_part(x)
        if self.is_linear:
            return 2.0 * self._linear_adjoint(bx - y)
        return 2.0 * self._linear_adjoint((np.abs(bx) - y) * np.sign(bx))

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "m": self.m, "n": self.n, "seed": self.seed, "params": dict(self.params)}


class Measurement(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y: np.ndarray
    sigma: float = Field(ge=0)
    operator: ForwardOperator

    @field_validator("y", mode="before")
    @classmethod
    def _finite_y(cls, value) -> np.ndarray:
        return as_vector(value, "y")


def identity_operator(n: int) -> ForwardOperator:
    return ForwardOperator(kind=OperatorKind.identity, m=n, n=n)


def dense_gaussian_operator(m: int, n: int, seed: int) -> ForwardOperator:
    """A with i.i.d. N(0, 1/m) entries drawn from stream (seed, 0)."""
    matrix = RandomSource(seed).gaussian((m, n), 1.0 / math.sqrt(m))
    return ForwardOperator(kind=OperatorKind.dense_gaussian, m=m, n=n, seed=seed, matrix=matrix)


def phaseless_operator(m: int, n: int, seed: int) -> ForwardOperator:
    """|Ax| with the same A the dense operator of this (m, n, seed) uses."""
    matrix = RandomSource(seed).gaussian((m, n), 1.0 / math.sqrt(m))
    return ForwardOperator(kind=OperatorKind.phaseless_gaussian, m=m, n=n, seed=seed, matrix=matrix)


def inpaint_operator(n: int, keep_prob: float, seed: int) -> ForwardOperator:
    """Keep each coordinate independently with probability keep_prob."""
    if not 0.0 < keep_prob <= 1.0:
        raise InvalidArgumentError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    mask = RandomSource(seed).uniform(n) < keep_prob
    if not mask.any():
        raise InvalidArgumentError("inpainting mask keeps no coordinates; raise keep_prob or change seed")
    return ForwardOperator(
        kind=OperatorKind.inpaint_mask,
        m=int(mask.sum()),
        n=n,
        seed=seed,
        params={"keep_prob": keep_prob},
        mask=mask,
    )


def inpaint_from_mask(mask) -> ForwardOperator:
    mask = np.asarray(mask, dtype=bool)
    return ForwardOperator(kind=OperatorKind.inpaint_mask, m=int(mask.sum()), n=mask.shape[0], mask=mask)


def gaussian_kernel(ksize: int, std: float) -> np.ndarray:
    offsets = np.arange(ksize) - ksize // 2
    taps = np.exp(-(offsets ** 2) / (2.0 * std ** 2))
    kernel = np.outer(taps, taps)
    return kernel / kernel.sum()


def build_blur(n: int, ksize: int, std: float) -> ForwardOperator:
    """Circular Gaussian blur on an n x n grid (flattened row-major)."""
    if ksize % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be odd, got {ksize}")
    if ksize > n or ksize < 1:
        raise InvalidArgumentError(f"kernel size must lie in [1, {n}], got {ksize}")
    if std <= 0:
        raise InvalidArgumentError(f"std must be positive, got {std}")
    return ForwardOperator(
        kind=OperatorKind.circular_blur,
        m=n * n,
        n=n * n,
        params={"side": n, "ksize": ksize, "std": std},
        kernel=gaussian_kernel(ksize, std),
    )


def coded_phaseless_operator(side: int, m: int, ksize: int, seed: int) -> ForwardOperator:
    """|first m outputs of h * (r . x)|: Rademacher flip r, random Gaussian filter h."""
    if ksize % 2 == 0 or ksize > side:
        raise InvalidArgumentError(f"kernel size must be odd and <= {side}, got {ksize}")
    rng = RandomSource(seed)
    signs = np.where(rng.uniform(side * side) < 0.5, -1.0, 1.0)
    kernel = rng.gaussian((ksize, ksize), 1.0 / ksize)
    return ForwardOperator(
        kind=OperatorKind.coded_phaseless,
        m=m,
        n=side * side,
        seed=seed,
        params={"side": side, "ksize": ksize},
        kernel=kernel,
        signs=signs,
    )


def apply(op: ForwardOperator, x) -> Vector:
    return op.apply(x)


def residual_gradient(op: ForwardOperator, x, y) -> Vector:
    return op.residual_gradient(x, y)


def measure(op: ForwardOperator, x, sigma: float, rng: RandomSource) -> Measurement:
    """y = A(x) + eta, eta ~ N(0, sigma^2 I_m)."""
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be nonnegative, got {sigma}")
    clean = op.apply(x)
    y = clean + rng.gaussian(op.m, sigma) if sigma > 0 else clean
    return Measurement(y=y, sigma=sigma, operator=op)


def _measurement_count(cfg: "OperatorConfig", n: int) -> int:
    if cfg.m is not None:
        return cfg.m
    if cfg.ratio is not None:
        return max(1, int(round(cfg.ratio * n)))
    return n


def _grid_side(n: int) -> int:
    side = math.isqrt(n)
    if side * side != n:
        raise InvalidDimensionError(f"blur operators need a square grid, n={n} is not a perfect square")
    return side


def build_operator(cfg: "OperatorConfig", n: int) -> ForwardOperator:
    """Operator for signals of length n described by an OperatorConfig."""
    kind = OperatorKind(cfg.kind)
    if kind == OperatorKind.identity:
        return identity_operator(n)
    if kind == OperatorKind.dense_gaussian:
        return dense_gaussian_operator(_measurement_count(cfg, n), n, cfg.seed)
    if kind == OperatorKind.phaseless_gaussian:
        return phaseless_operator(_measurement_count(cfg, n), n, cfg.seed)
    if kind == OperatorKind.inpaint_mask:
        return inpaint_operator(n, cfg.keep_prob, cfg.seed)
    if kind == OperatorKind.circular_blur:
        return build_blur(_grid_side(n), cfg.ksize, cfg.std)
    return coded_phaseless_operator(_grid_side(n), _measurement_count(cfg, n), cfg.ksize, cfg.seed)
