"""Dense tensor core: seeded random streams, Gaussian draws, SVD and the
Monte-Carlo oracles for the Gaussian quadratic-form lemmas.

Matrices and vectors are plain ``float64`` numpy arrays; the helpers here only
validate shape and finiteness.
"""
from __future__ import annotations

import logging
import math
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from app.utils.errors import (
    InvalidArgumentError,
    InvalidDimensionError,
    InvalidValueError,
)

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]
Shape = Union[int, Tuple[int, ...]]

_MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 2.0 ** -53
_MC_BATCH = 8192


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RandomSource:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    The bits come from numpy's counter-based Philox4x64 generator with the
    128-bit key ``seed | stream_id << 64`` and counter starting at zero, so a
    given key yields the same words on every platform and numpy release.

    Uniforms are ``((w >> 11) + 0.5) * 2**-53`` for each raw word ``w``, which
    lies strictly inside (0, 1). Gaussians use Box-Muller on consecutive
    uniform pairs ``(u1, u2)``: ``r = sqrt(-2 ln u1)`` gives ``r cos(2 pi u2)``
    then ``r sin(2 pi u2)``. An unused second output is kept as a spare for the
    next call, so the Gaussian sequence is independent of call sizes.

    Single owner: concurrent users must take their own ``child`` streams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._bits = np.random.Philox(key=self.seed | (self.stream_id << 64))
        self._spare: Optional[float] = None

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, index: int) -> "RandomSource":
        """Independent stream derived from this one's key and ``index``."""
        mixed = _splitmix64(self.stream_id ^ _splitmix64(int(index) + 1))
        return RandomSource(self.seed, mixed)

    def raw(self, count: int) -> NDArray[np.uint64]:
        return self._bits.random_raw(count)

    def uniform(self, shape: Shape = ()) -> NDArray[np.float64]:
        count = int(np.prod(shape, dtype=np.int64))
        words = self.raw(count)
        values = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_M53
        return values.reshape(shape)

    def gaussian(self, shape: Shape = (), sigma: float = 1.0) -> NDArray[np.float64]:
        count = int(np.prod(shape, dtype=np.int64))
        out = np.empty(count, dtype=np.float64)
        filled = 0
        if self._spare is not None and count > 0:
            out[0] = self._spare
            self._spare = None
            filled = 1
        remaining = count - filled
        if remaining > 0:
            pairs = (remaining + 1) // 2
            u = self.uniform((pairs, 2))
            radius = np.sqrt(-2.0 * np.log(u[:, 0]))
            theta = 2.0 * math.pi * u[:, 1]
            z = np.stack((radius * np.cos(theta), radius * np.sin(theta)), axis=1).ravel()
            out[filled:] = z[:remaining]
            if z.size > remaining:
                self._spare = float(z[-1])
        return (out * sigma).reshape(shape)

    def integers(self, low: int, high: int, size: Shape = ()) -> NDArray[np.int64]:
        """Uniform integers on ``[low, high)``."""
        if high <= low:
            raise InvalidArgumentError(f"Empty integer range [{low}, {high})")
        span = high - low
        draws = np.floor(self.uniform(size) * span).astype(np.int64)
        return low + np.minimum(draws, span - 1)

    def permutation(self, n: int) -> NDArray[np.int64]:
        return np.argsort(self.uniform(n), kind="stable")


class McEstimate(NamedTuple):
    mean: float
    std_error: float


def as_vector(x, name: str = "vector") -> Vector:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidDimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f"{name} has non-finite entries")
    return arr


def as_matrix(m, name: str = "matrix") -> Matrix:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidDimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise InvalidDimensionError(f"{name} is empty: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f"{name} has non-finite entries")
    return arr


def gaussian_vector(rng: RandomSource, n: int, sigma: float = 1.0) -> Vector:
    """n i.i.d. draws from N(0, sigma^2)."""
    if n < 1:
        raise InvalidDimensionError(f"Vector length must be >= 1, got {n}")
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be nonnegative, got {sigma}")
    return rng.gaussian(n, sigma)


def svd(m) -> Tuple[Matrix, Vector, Matrix]:
    """Thin SVD ``m = U diag(s) V^T`` with s non-increasing.

    Column signs are fixed so that the largest-magnitude entry of each column of
    U is positive; V is flipped alongside so the product is unchanged.
    """
    m = as_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    pivots = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    signs = np.where(pivots < 0, -1.0, 1.0)
    return u * signs, s, vt.T * signs


def _quadratic_samples(m: Matrix, factor: Matrix, rng: RandomSource, samples: int) -> McEstimate:
    values = np.empty(samples, dtype=np.float64)
    mapped = m @ factor
    for start in range(0, samples, _MC_BATCH):
        stop = min(start + _MC_BATCH, samples)
        g = rng.gaussian((stop - start, factor.shape[1]))
        values[start:stop] = np.sum((g @ mapped.T) ** 2, axis=1)
    std_error = float(values.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return McEstimate(float(values.mean()), std_error)


def mc_frobenius_oracle(m, rng: RandomSource, samples: int) -> McEstimate:
    """Monte-Carlo estimate of E||Mx||^2 for x ~ N(0, I); tends to ||M||_F^2."""
    m = as_matrix(m)
    if samples < 1:
        raise InvalidArgumentError(f"samples must be >= 1, got {samples}")
    return _quadratic_samples(m, np.eye(m.shape[1]), rng, samples)


def mc_covariance_oracle(m, cov, rng: RandomSource, samples: int) -> McEstimate:
    """Monte-Carlo estimate of E||Mx||^2 for x ~ N(0, cov); tends to Tr(M cov M^T)."""
    m = as_matrix(m)
    cov = as_matrix(cov, "cov")
    if samples < 1:
        raise InvalidArgumentError(f"samples must be >= 1, got {samples}")
    if cov.shape[0] != cov.shape[1] or cov.shape[0] != m.shape[1]:
        raise InvalidDimensionError(
            f"cov shape {cov.shape} is not conformable with matrix shape {m.shape}"
        )
    scale = max(1.0, float(np.max(np.abs(cov))))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidValueError("cov is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] < -1e-10 * max(1.0, float(eigvals[-1])):
        raise InvalidValueError(f"cov is not positive semi-definite (min eigenvalue {eigvals[0]:.3e})")
    factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    return _quadratic_samples(m, factor, rng, samples)
