"""Inverse-problem solvers over tunable priors: the diffusion posterior samplers
and the latent MAP estimator."""
from __future__ import annotations

import logging
import math
from typing import List, NamedTuple, Optional

import numpy as np

from app.models.config import InversionConfig, MapConfig
from app.models.networks import Decoder, DenoiserNet
from app.models.operator import ForwardOperator, Measurement
from app.models.schedule import NoiseSchedule, predict_z0
from app.models.truncation import truncate
from app.controllers.diffusion_controller import posterior_mean
from app.utils.errors import (
    DegenerateVarianceError,
    InvalidArgumentError,
    InvalidDimensionError,
    InvalidIndexError,
    NonFiniteObjectiveError,
)
from app.utils.tensor import RandomSource

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4


class DataConsistency(NamedTuple):
    z: np.ndarray
    objective_trace: List[float]


class MapSolution(NamedTuple):
    z: np.ndarray
    x: np.ndarray
    objective_trace: List[float]


def _check_conformable(measurement: Measurement, decoder: Decoder, net: Optional[DenoiserNet] = None) -> None:
    op = measurement.operator
    if decoder.signal_dim != op.n:
        raise InvalidDimensionError(f"decoder emits {decoder.signal_dim} values, operator expects {op.n}")
    if measurement.y.shape != (op.m,):
        raise InvalidDimensionError(f"measurement has shape {measurement.y.shape}, operator emits {op.m}")
    if net is not None and net.latent_dim != decoder.latent_dim:
        raise InvalidDimensionError(f"denoiser latent dim {net.latent_dim} != decoder latent dim {decoder.latent_dim}")


def _resolve_k(k: Optional[int], d: int) -> int:
    if k is None:
        return d
    if not 1 <= k <= d:
        raise InvalidIndexError(f"k must lie in [1, {d}], got {k}")
    return k


def _start_step(cfg: InversionConfig, schedule: NoiseSchedule) -> int:
    if cfg.steps is None:
        return schedule.steps
    if cfg.steps > schedule.steps:
        raise InvalidArgumentError(f"steps {cfg.steps} exceeds the schedule length {schedule.steps}")
    return cfg.steps


def step_sigma(cfg: InversionConfig, schedule: NoiseSchedule, t: int) -> float:
    """sigma_t under the configured policy, never above sigma_t^DDPM."""
    ceiling = schedule.ddpm_sigma_at(t)
    if cfg.sigma_policy == "constant":
        return min(cfg.sigma_value, ceiling)
    if cfg.sigma_value > 1.0:
        raise InvalidArgumentError(f"ddpm_fraction must lie in [0, 1], got {cfg.sigma_value}")
    return cfg.sigma_value * ceiling


def propose(schedule: NoiseSchedule, reverse: str, zt, z0_hat, eps_hat, t: int, sigma_t: float, rng: RandomSource) -> np.ndarray:
    """Unconditional proposal z'_{t-1} from the current iterate and its z0 prediction.

    ``ddpm`` blends z_t and z0_hat with the posterior coefficients; ``ddim`` moves
    z0_hat to level t-1 along eps_hat.
    """
    ab = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    if reverse == "ddpm":
        c1 = math.sqrt(schedule.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab)
        c2 = math.sqrt(ab_prev) * schedule.beta_at(t) / (1.0 - ab)
        proposal = c1 * zt + c2 * z0_hat
    else:
        proposal = math.sqrt(ab_prev) * z0_hat + math.sqrt(max(0.0, 1.0 - ab_prev - sigma_t ** 2)) * eps_hat
    if sigma_t > 0:
        proposal = proposal + sigma_t * rng.gaussian(np.shape(zt))
    return proposal


def data_consistency_objective(op: ForwardOperator, decoder: Decoder, y, z_prime, sigma_t: float, z) -> float:
    residual = y - op.apply(decoder.decode(z))
    return float(np.sum(residual ** 2) + np.sum((z - z_prime) ** 2) / (2.0 * sigma_t ** 2))


def solve_data_consistency(
    op: ForwardOperator,
    decoder: Decoder,
    y,
    z_prime,
    sigma_t: float,
    z_init,
    steps: int,
    step_size: float,
) -> DataConsistency:
    """Gradient descent on ||y - A(D(z))||^2 + ||z - z'||^2 / (2 sigma_t^2) from z_init.

    The trace holds the objective before the first step and after every step.
    """
    if sigma_t <= 0:
        raise DegenerateVarianceError("the data-consistency coupling needs sigma_t > 0")
    if steps < 1 or step_size <= 0:
        raise InvalidArgumentError(f"need steps >= 1 and a positive step size, got {steps}, {step_size}")
    y = np.asarray(y, dtype=np.float64)
    z_prime = np.asarray(z_prime, dtype=np.float64)
    z = np.array(z_init, dtype=np.float64)
    weight = 1.0 / sigma_t ** 2
    trace = [data_consistency_objective(op, decoder, y, z_prime, sigma_t, z)]
    for _ in range(steps):
        x = decoder.decode(z)
        grad = decoder.vjp(z, op.residual_gradient(x, y)) + weight * (z - z_prime)
        z = z - step_size * grad
        value = data_consistency_objective(op, decoder, y, z_prime, sigma_t, z)
        if not math.isfinite(value):
            raise NonFiniteObjectiveError(f"data-consistency objective became {value}")
        trace.append(value)
    return DataConsistency(z, trace)


def _output(decoder: Decoder, z0_hat: np.ndarray, k: int, cfg: InversionConfig) -> np.ndarray:
    return decoder.decode(truncate(z0_hat, k) if cfg.return_truncated else z0_hat)


def tunable_posterior_sample(
    measurement: Measurement,
    decoder: Decoder,
    net: DenoiserNet,
    schedule: NoiseSchedule,
    cfg: InversionConfig,
    rng: RandomSource,
    trace: Optional[list] = None,
) -> np.ndarray:
    """Posterior sampling with a tunable prior.

    Each step predicts z0 from the denoiser, draws the unconditional proposal
    z'_{t-1}, pulls it toward the measurement (an inner proximal solve started
    at z0_hat, or a single gradient step with ``guidance == "gradient"``) and
    truncates the result to k coordinates. Returns D(z0_hat) of the last step.

    The ``gradient`` branch differentiates the data term at the proposal itself,
    so it needs no denoiser VJP. It is the cheaper variant of
    ``gradient_guided_sample``, which differentiates through z0_hat(z_t).
    """
    _check_conformable(measurement, decoder, net)
    op = measurement.operator
    y = measurement.y
    d = net.latent_dim
    k = _resolve_k(cfg.k, d)
    start = _start_step(cfg, schedule)
    prox = cfg.guidance == "quadratic_prox"
    if prox and cfg.sigma_value == 0:
        raise DegenerateVarianceError("quadratic_prox data consistency needs a nonzero sigma_t policy")

    floored = False
    z = rng.gaussian(d)
    z0_hat = z
    for t in range(start, 0, -1):
        eps_hat = net.predict(z, t)
        z0_hat = predict_z0(schedule, z, eps_hat, t)
        sigma_t = step_sigma(cfg, schedule, t)
        proposal = propose(schedule, cfg.reverse, z, z0_hat, eps_hat, t, sigma_t, rng)
        if prox:
            coupling = max(sigma_t, SIGMA_FLOOR)
            if coupling != sigma_t and not floored:
                floored = True
                logger.warning(f"sigma_t below {SIGMA_FLOOR} from t={t}; flooring the coupling weight")
            step_size = cfg.inner_step_size / (cfg.data_curvature + 1.0 / coupling ** 2)
            z = solve_data_consistency(op, decoder, y, proposal, coupling, z0_hat, cfg.inner_steps, step_size).z
        elif cfg.guidance_step > 0:
            # data gradient at the proposal, not through z0_hat
            z = proposal - cfg.guidance_step * decoder.vjp(proposal, op.residual_gradient(decoder.decode(proposal), y))
        else:
            z = proposal
        z = truncate(z, k)
        if not np.all(np.isfinite(z)):
            raise NonFiniteObjectiveError(f"posterior iterate became non-finite at t={t}")
        if trace is not None:
            trace.append(z.copy())
    return _output(decoder, z0_hat, k, cfg)


def gradient_guided_sample(
    measurement: Measurement,
    decoder: Decoder,
    net: DenoiserNet,
    schedule: NoiseSchedule,
    cfg: InversionConfig,
    rng: RandomSource,
    trace: Optional[list] = None,
) -> np.ndarray:
    """Latent guidance by a gradient step through the z0 prediction.

    z_{t-1} = z'_{t-1} - zeta * grad_{z_t} ||y - A(D(z0_hat(z_t)))||^2, then truncated
    to k. ``reverse == "ddpm"`` uses the ancestral step with sigma_t from the policy.
    """
    _check_conformable(measurement, decoder, net)
    op = measurement.operator
    y = measurement.y
    d = net.latent_dim
    k = _resolve_k(cfg.k, d)
    start = _start_step(cfg, schedule)
    zeta = cfg.guidance_step

    z = rng.gaussian(d)
    z0_hat = z
    for t in range(start, 0, -1):
        eps_hat = net.predict(z, t)
        z0_hat = predict_z0(schedule, z, eps_hat, t)
        sigma_t = step_sigma(cfg, schedule, t)
        if cfg.reverse == "ddpm":
            proposal = posterior_mean(schedule, z, eps_hat, t)
            if sigma_t > 0:
                proposal = proposal + sigma_t * rng.gaussian(z.shape)
        else:
            proposal = propose(schedule, cfg.reverse, z, z0_hat, eps_hat, t, sigma_t, rng)
        if zeta > 0:
            ab = schedule.alpha_bar_at(t)
            g_z0 = decoder.vjp(z0_hat, op.residual_gradient(decoder.decode(z0_hat), y))
            g_z = (g_z0 - math.sqrt(1.0 - ab) * net.input_vjp(z, t, g_z0)) / math.sqrt(ab)
            proposal = proposal - zeta * g_z
        z = truncate(proposal, k)
        if not np.all(np.isfinite(z)):
            raise NonFiniteObjectiveError(f"guided iterate became non-finite at t={t}")
        if trace is not None:
            trace.append(z.copy())
    return _output(decoder, z0_hat, k, cfg)


def latent_map_objective(op: ForwardOperator, decoder: Decoder, y, z: np.ndarray, gamma: float) -> float:
    padded = np.zeros(decoder.latent_dim)
    padded[: z.shape[0]] = z
    residual = y - op.apply(decoder.decode(padded))
    return float(0.5 * np.sum(residual ** 2) + 0.5 * gamma * np.sum(z ** 2))


def solve_latent_map(measurement: Measurement, decoder: Decoder, cfg: MapConfig) -> MapSolution:
    """Proximal gradient from z = 0 on 1/2 ||y - A(D(pad_k(z)))||^2 + gamma/2 ||z||^2, z in R^k.

    The l2 term enters through its prox z -> z / (1 + step * gamma).
    """
    _check_conformable(measurement, decoder)
    op = measurement.operator
    y = measurement.y
    d = decoder.latent_dim
    k = _resolve_k(cfg.k, d)
    shrink = 1.0 + cfg.step_size * cfg.gamma
    z = np.zeros(k)
    padded = np.zeros(d)
    trace = [latent_map_objective(op, decoder, y, z, cfg.gamma)]
    for _ in range(cfg.steps):
        padded[:k] = z
        x = decoder.decode(padded)
        grad = 0.5 * decoder.vjp(padded, op.residual_gradient(x, y))[:k]
        z = (z - cfg.step_size * grad) / shrink
        value = latent_map_objective(op, decoder, y, z, cfg.gamma)
        if not math.isfinite(value):
            raise NonFiniteObjectiveError(f"latent MAP objective became {value}")
        trace.append(value)
    padded = np.zeros(d)
    padded[:k] = z
    return MapSolution(z, decoder.decode(padded), trace)


def latent_map_estimate(measurement: Measurement, decoder: Decoder, cfg: MapConfig) -> np.ndarray:
    return solve_latent_map(measurement, decoder, cfg).x
