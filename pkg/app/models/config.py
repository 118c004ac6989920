"""JSON configuration documents. Unknown keys are rejected."""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.operator import OperatorKind


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LawConfig(StrictModel):
    p: float = Field(default=0.1, gt=0, le=1)


class DatasetConfig(StrictModel):
    """Synthetic low-rank Gaussian data x = U diag(s) V^T z.

    Without an explicit ``spectrum`` the singular values are scale * decay^i,
    i = 1..n.
    """

    n: int = Field(default=32, ge=1)
    spectrum: Optional[List[float]] = None
    scale: float = Field(default=2.0, gt=0)
    decay: float = Field(default=0.8, gt=0, le=1)
    count: int = Field(default=1000, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_spectrum(self) -> "DatasetConfig":
        if self.spectrum is not None and len(self.spectrum) != self.n:
            raise ValueError(f"spectrum has {len(self.spectrum)} values, expected n={self.n}")
        return self

    def resolved_spectrum(self) -> np.ndarray:
        if self.spectrum is not None:
            return np.asarray(self.spectrum, dtype=np.float64)
        return self.scale * self.decay ** np.arange(1, self.n + 1)


class TheoryConfig(StrictModel):
    spectrum: List[float] = Field(min_length=1)
    sigma: float = Field(gt=0)
    gamma: float = Field(default=0.0, ge=0)
    trials: int = Field(default=20000, ge=2)
    seed: int = 0


class VaeTrainConfig(StrictModel):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    latent_dim: int = Field(default=8, ge=1)
    hidden: int = Field(default=64, ge=1)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=32, ge=1)
    step_size: float = Field(default=1e-3, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    lambda_reg: float = Field(default=1e-3, ge=0)
    lambda_drop: float = Field(default=0.1, ge=0)
    law: LawConfig = Field(default_factory=LawConfig)
    seed: int = 0


class OrderedTrainConfig(StrictModel):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    latent_dim: int = Field(default=32, ge=1)
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=32, ge=1)
    step_size: float = Field(default=0.01, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    law: LawConfig = Field(default_factory=lambda: LawConfig(p=0.05))
    seed: int = 0


class LdmTrainConfig(StrictModel):
    """Latents come from N(0, I) (``gaussian``) or from encoding the dataset with
    a trained model at ``model_path``."""

    latent_source: Literal["gaussian", "model"] = "gaussian"
    model_path: Optional[str] = None
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    latent_dim: int = Field(default=2, ge=1)
    latent_count: int = Field(default=4096, ge=1)
    steps: int = Field(default=200, ge=1)
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.05, gt=0, lt=1)
    lambda_mix: float = Field(default=0.1, ge=0, le=1)
    law: LawConfig = Field(default_factory=LawConfig)
    hidden: int = Field(default=32, ge=1)
    train_steps: int = Field(default=5000, ge=1)
    batch_size: int = Field(default=128, ge=1)
    step_size: float = Field(default=0.01, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_source(self) -> "LdmTrainConfig":
        if self.latent_source == "model" and not self.model_path:
            raise ValueError("latent_source 'model' needs model_path")
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        return self


class OperatorConfig(StrictModel):
    """Measurement operator over signals of length n. ``m`` or ``ratio`` sets the
    measurement count of the Gaussian kinds; blur kinds need n = side^2."""

    kind: OperatorKind = OperatorKind.identity
    m: Optional[int] = Field(default=None, ge=1)
    ratio: Optional[float] = Field(default=None, gt=0)
    keep_prob: float = Field(default=0.2, gt=0, le=1)
    ksize: int = Field(default=5, ge=1)
    std: float = Field(default=3.0, gt=0)
    seed: int = 0


class InversionConfig(StrictModel):
    """Posterior-sampling settings.

    ``sigma_value`` is sigma_t under the ``constant`` policy (clamped to
    sigma_t^DDPM) or the fraction of sigma_t^DDPM under ``ddpm_fraction``.
    The inner step is ``inner_step_size / (data_curvature + 1/sigma_t^2)``.
    """

    k: Optional[int] = Field(default=None, ge=1)
    steps: Optional[int] = Field(default=None, ge=1)
    sigma_policy: Literal["constant", "ddpm_fraction"] = "constant"
    sigma_value: float = Field(default=0.1, ge=0)
    inner_steps: int = Field(default=3, ge=1)
    inner_step_size: float = Field(default=0.5, gt=0)
    data_curvature: float = Field(default=2.0, gt=0)
    guidance: Literal["quadratic_prox", "gradient"] = "quadratic_prox"
    guidance_step: float = Field(default=0.1, ge=0)
    reverse: Literal["ddpm", "ddim"] = "ddpm"
    return_truncated: bool = False
    seed: int = 0


class MapConfig(StrictModel):
    """Latent MAP by proximal gradient from z = 0."""

    k: Optional[int] = Field(default=None, ge=1)
    gamma: float = Field(default=0.0, ge=0)
    steps: int = Field(default=500, ge=1)
    step_size: float = Field(default=0.1, gt=0)
    init: Literal["zero"] = "zero"


class ExperimentConfig(StrictModel):
    task: str = "denoise"
    method: Literal["closed_form", "map", "posterior", "guided"] = "map"
    spectrum: Optional[List[float]] = None
    gamma: float = Field(default=0.0, ge=0)
    model_path: Optional[str] = None
    ldm_path: Optional[str] = None
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    operator: OperatorConfig = Field(default_factory=OperatorConfig)
    sigma: float = Field(default=0.25, ge=0)
    k_values: List[int] = Field(default_factory=lambda: [1], min_length=1)
    trials: int = Field(default=1, ge=1)
    seed: int = 0
    peak: float = Field(default=1.0, gt=0)
    map: MapConfig = Field(default_factory=MapConfig)
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    validation_trials: int = Field(default=0, ge=0)
    record_timing: bool = False
    workers: int = Field(default=1, ge=1)
    out: Optional[str] = None

    @field_validator("model_path", "ldm_path")
    @classmethod
    def _path_exists(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and not Path(value).exists():
            raise ValueError(f"referenced path does not exist: {value}")
        return value

    @field_validator("k_values")
    @classmethod
    def _positive_ks(cls, value: List[int]) -> List[int]:
        if any(k < 1 for k in value):
            raise ValueError("every k must be >= 1")
        return value

    @model_validator(mode="after")
    def _check_method(self) -> "ExperimentConfig":
        if self.method == "closed_form" and self.spectrum is None:
            raise ValueError("method 'closed_form' needs a spectrum")
        if self.method in ("map", "posterior", "guided") and self.model_path is None:
            raise ValueError(f"method '{self.method}' needs model_path")
        if self.method in ("posterior", "guided") and self.ldm_path is None:
            raise ValueError(f"method '{self.method}' needs ldm_path")
        if self.validation_trials > self.trials:
            raise ValueError("validation_trials cannot exceed trials")
        return self
