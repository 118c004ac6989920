"""Nested-dropout truncation z -> z_{<=k} and the truncated geometric law on k."""
from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.utils.errors import InvalidIndexError
from app.utils.tensor import RandomSource


def truncate(z, k: int) -> np.ndarray:
    """Keep the first k coordinates along the last axis, zero the rest."""
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[-1]
    if not 1 <= k <= d:
        raise InvalidIndexError(f"k must lie in [1, {d}], got {k}")
    out = z.copy()
    out[..., k:] = 0.0
    return out


def prefix_mask(ks, d: int) -> np.ndarray:
    """Row-wise 0/1 masks keeping the first ks[i] of d coordinates."""
    ks = np.asarray(ks)
    return (np.arange(d) < ks[..., None]).astype(np.float64)


class TruncationLaw(BaseModel):
    """P(k) = p (1-p)^(k-1) / (1 - (1-p)^d) on {1..d}."""

    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1)
    p: float = Field(gt=0, le=1)

    def pmf(self) -> np.ndarray:
        k = np.arange(1, self.d + 1)
        # log-space keeps (1-p)^k accurate for tiny p and large d
        log_q = np.log1p(-self.p) if self.p < 1 else -np.inf
        weights = self.p * np.exp((k - 1) * log_q) if self.p < 1 else (k == 1).astype(np.float64)
        return weights / weights.sum()

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf())

    def mean(self) -> float:
        return float(np.sum(np.arange(1, self.d + 1) * self.pmf()))


def sample_ks(law: TruncationLaw, rng: RandomSource, count: int) -> np.ndarray:
    """count draws from law by inverse-CDF on uniforms."""
    cdf = law.cdf()
    u = rng.uniform(count)
    ks = np.searchsorted(cdf, u, side="right") + 1
    return np.minimum(ks, law.d)


def sample_k(law: TruncationLaw, rng: RandomSource) -> int:
    return int(sample_ks(law, rng, 1)[0])
