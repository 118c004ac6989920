"""Diffusion noise schedule and the closed-form forward marginal."""
from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.utils.errors import InvalidArgumentError, InvalidIndexError
from app.utils.tensor import RandomSource


class NoiseSchedule(BaseModel):
    """beta_t, alpha_t = 1 - beta_t, alpha_bar_t = prod_{j<=t} alpha_j and
    sigma_t^DDPM = sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t), with
    alpha_bar_0 = 1. Arrays are indexed by t - 1."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    ddpm_sigma: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "NoiseSchedule":
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise InvalidArgumentError("every beta_t must lie in (0, 1)")
        return self

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        beta = np.asarray(betas, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise InvalidArgumentError("betas must be a non-empty vector")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidArgumentError("every beta_t must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        previous = np.concatenate(([1.0], alpha_bar[:-1]))
        ddpm_sigma = np.sqrt((1.0 - previous) / (1.0 - alpha_bar) * beta)
        return cls(beta=beta, alpha=alpha, alpha_bar=alpha_bar, ddpm_sigma=ddpm_sigma)

    @property
    def steps(self) -> int:
        return int(self.beta.shape[0])

    def check_t(self, t: int, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        if not low <= t <= self.steps:
            raise InvalidIndexError(f"t must lie in [{low}, {self.steps}], got {t}")

    def alpha_bar_at(self, t: int) -> float:
        self.check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def alpha_at(self, t: int) -> float:
        self.check_t(t)
        return float(self.alpha[t - 1])

    def beta_at(self, t: int) -> float:
        self.check_t(t)
        return float(self.beta[t - 1])

    def ddpm_sigma_at(self, t: int) -> float:
        self.check_t(t)
        return float(self.ddpm_sigma[t - 1])


def make_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta ramp from beta_start to beta_end over steps steps."""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidArgumentError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, steps))


def forward_marginal(schedule: NoiseSchedule, z0, t: int, rng: RandomSource, eps=None):
    """z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps; returns (z_t, eps).

    ``eps`` may be pinned; otherwise it is drawn from rng. t = 0 returns z0.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    ab = schedule.alpha_bar_at(t)
    if eps is None:
        eps = rng.gaussian(z0.shape)
    eps = np.asarray(eps, dtype=np.float64)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps, eps


def predict_z0(schedule: NoiseSchedule, zt, eps_hat, t: int) -> np.ndarray:
    """(z_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t)."""
    ab = schedule.alpha_bar_at(t)
    zt = np.asarray(zt, dtype=np.float64)
    return (zt - np.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(ab)
