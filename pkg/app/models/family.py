from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.utils.errors import (
    InvalidDimensionError,
    InvalidIndexError,
    InvalidValueError,
    SingularGeneratorError,
)
from app.utils.tensor import Matrix, Vector, as_matrix, svd

_ORTHO_TOL = 1e-10
_SINGULAR_RATIO = 1e-12


class GeneratorFamily(BaseModel):
    """SVD-backed family {G_k = U diag(s_1..s_k, 0..0) V^T} of linear generators."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "GeneratorFamily":
        n = self.s.shape[0]
        if self.u.shape != (n, n) or self.v.shape != (n, n):
            raise InvalidDimensionError("u, v must be n x n with n = len(s)")
        if np.any(self.s <= 0) or np.any(np.diff(self.s) > 0):
            raise InvalidValueError("singular values must be positive and non-increasing")
        eye = np.eye(n)
        if np.max(np.abs(self.u.T @ self.u - eye)) > _ORTHO_TOL or np.max(np.abs(self.v.T @ self.v - eye)) > _ORTHO_TOL:
            raise InvalidValueError("u and v must be orthogonal")
        return self

    @property
    def n(self) -> int:
        return int(self.s.shape[0])

    @classmethod
    def from_matrix(cls, g) -> "GeneratorFamily":
        g = as_matrix(g, "generator")
        if g.shape[0] != g.shape[1]:
            raise InvalidDimensionError(f"generator must be square, got {g.shape}")
        u, s, v = svd(g)
        if s[-1] <= _SINGULAR_RATIO * s[0]:
            raise SingularGeneratorError(
                f"generator is numerically singular (s_min={s[-1]:.3e}, s_max={s[0]:.3e})"
            )
        return cls(u=u, s=s, v=v)

    @classmethod
    def from_spectrum(cls, spectrum, u=None, v=None) -> "GeneratorFamily":
        """Family with the given singular values; identity rotations by default."""
        s = np.asarray(spectrum, dtype=np.float64)
        n = s.shape[0]
        return cls(
            u=np.eye(n) if u is None else np.asarray(u, dtype=np.float64),
            s=s,
            v=np.eye(n) if v is None else np.asarray(v, dtype=np.float64),
        )

    def check_k(self, k: int) -> None:
        if not 1 <= k <= self.n:
            raise InvalidIndexError(f"k must lie in [1, {self.n}], got {k}")

    def generator_at(self, k: int) -> Matrix:
        self.check_k(k)
        return (self.u[:, :k] * self.s[:k]) @ self.v[:, :k].T

    @property
    def generator(self) -> Matrix:
        return self.generator_at(self.n)


class DenoiseProblem(BaseModel):
    """Denoising y = x0 + eta with x0 ~ N(0, G G^T), eta ~ N(0, sigma^2 I);
    gamma weights the latent prior (0 = MLE, sigma^2 = MAP)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    family: GeneratorFamily
    sigma: float = Field(gt=0)
    gamma: float = Field(default=0.0, ge=0)


def make_family(g) -> GeneratorFamily:
    return GeneratorFamily.from_matrix(g)


def generator_at(family: GeneratorFamily, k: int) -> Matrix:
    return family.generator_at(k)


def mle_problem(family: GeneratorFamily, sigma: float) -> DenoiseProblem:
    return DenoiseProblem(family=family, sigma=sigma, gamma=0.0)


def map_problem(family: GeneratorFamily, sigma: float) -> DenoiseProblem:
    return DenoiseProblem(family=family, sigma=sigma, gamma=sigma ** 2)
