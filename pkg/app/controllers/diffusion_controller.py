"""Latent diffusion: reverse steps, the truncated-latent training loss and sampling."""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from app.controllers.autoencoder_controller import TrainingResult, as_dataset
from app.models.config import LdmTrainConfig
from app.models.networks import DenoiserNet, Grads
from app.models.schedule import NoiseSchedule, make_schedule
from app.models.truncation import TruncationLaw, prefix_mask, sample_k, sample_ks, truncate
from app.utils.errors import InvalidArgumentError, InvalidIndexError, TrainingDivergedError
from app.utils.optim import GradientDescent
from app.utils.tensor import RandomSource

logger = logging.getLogger(__name__)

SIGMA_TOLERANCE = 1e-12


def check_sigma(schedule: NoiseSchedule, t: int, sigma_t: float) -> None:
    ceiling = schedule.ddpm_sigma_at(t)
    if not 0.0 <= sigma_t <= ceiling + SIGMA_TOLERANCE:
        raise InvalidArgumentError(f"sigma_t must lie in [0, {ceiling:.6g}] at t={t}, got {sigma_t}")


def posterior_mean(schedule: NoiseSchedule, zt, eps_hat, t: int) -> np.ndarray:
    """(z_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)."""
    alpha = schedule.alpha_at(t)
    ab = schedule.alpha_bar_at(t)
    return (zt - (1.0 - alpha) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)


def reverse_step(schedule: NoiseSchedule, net: DenoiserNet, zt, t: int, sigma_t: float, rng: RandomSource) -> np.ndarray:
    """One ancestral step z_t -> z_{t-1}; sigma_t = 0 draws no noise and is deterministic."""
    check_sigma(schedule, t, sigma_t)
    zt = np.asarray(zt, dtype=np.float64)
    mean = posterior_mean(schedule, zt, net.predict(zt, t), t)
    if sigma_t > 0:
        return mean + sigma_t * rng.gaussian(zt.shape)
    return mean


def ldm_objective(
    net: DenoiserNet,
    schedule: NoiseSchedule,
    z0: np.ndarray,
    ts,
    eps: np.ndarray,
    ks,
    lambda_mix: float,
) -> Tuple[float, Grads]:
    """Batch mean of (1-lam) ||eps - eps_theta(z_t, t)||^2 + lam ||eps - eps_theta(truncate(z_t, k), t)||^2.

    Both branches share (t, eps); the truncated branch truncates the noised latent.
    """
    if not 0.0 <= lambda_mix <= 1.0:
        raise InvalidArgumentError(f"lambda_mix must lie in [0, 1], got {lambda_mix}")
    ts = np.asarray(ts, dtype=np.int64)
    if np.any(ts < 1) or np.any(ts > schedule.steps):
        raise InvalidIndexError(f"every t must lie in [1, {schedule.steps}]")
    batch = z0.shape[0]
    ab = schedule.alpha_bar[ts - 1][:, None]
    zt = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    mask = prefix_mask(ks, net.latent_dim)

    full, full_cache = net.forward(zt, ts)
    cut, cut_cache = net.forward(zt * mask, ts)
    full_res = full - eps
    cut_res = cut - eps
    loss = ((1.0 - lambda_mix) * float(np.sum(full_res ** 2)) + lambda_mix * float(np.sum(cut_res ** 2))) / batch

    grads_full, _ = net.backward(full_cache, 2.0 * (1.0 - lambda_mix) * full_res / batch)
    grads_cut, _ = net.backward(cut_cache, 2.0 * lambda_mix * cut_res / batch)
    return loss, {name: grads_full[name] + grads_cut[name] for name in grads_full}


def ldm_loss(
    net: DenoiserNet,
    schedule: NoiseSchedule,
    z0,
    lambda_mix: float,
    law: TruncationLaw,
    rng: RandomSource,
) -> float:
    """Single-example loss; draws t, then eps, then k from rng."""
    z0 = np.asarray(z0, dtype=np.float64)
    t = int(rng.integers(1, schedule.steps + 1))
    eps = rng.gaussian(z0.shape)
    k = sample_k(law, rng)
    loss, _ = ldm_objective(net, schedule, z0[None, :], [t], eps[None, :], [k], lambda_mix)
    return loss


def ldm_train(data, config: LdmTrainConfig) -> TrainingResult:
    """Minibatch gradient descent on the truncated-latent loss; batches are drawn with replacement."""
    latents = as_dataset(data, "latents")
    d = latents.shape[1]
    schedule = make_schedule(config.steps, config.beta_start, config.beta_end)
    law = TruncationLaw(d=d, p=config.law.p)
    net = DenoiserNet.initialize(d, config.hidden, schedule.steps, RandomSource(config.seed, 0))
    rng = RandomSource(config.seed, 1)
    optimizer = GradientDescent(config.step_size, config.momentum)
    params = net.parameters()
    trace: List[float] = []
    logger.info(
        f"Training denoiser d={d} T={schedule.steps} lambda_mix={config.lambda_mix} "
        f"for {config.train_steps} steps on {latents.shape[0]} latents"
    )

    for step in range(config.train_steps):
        rows = rng.integers(0, latents.shape[0], config.batch_size)
        ts = rng.integers(1, schedule.steps + 1, config.batch_size)
        eps = rng.gaussian((config.batch_size, d))
        ks = sample_ks(law, rng, config.batch_size)
        loss, grads = ldm_objective(net, schedule, latents[rows], ts, eps, ks, config.lambda_mix)
        if not math.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        optimizer.step(params, grads)
        trace.append(loss)
        if step % 1000 == 0:
            logger.debug(f"step {step}: loss {loss:.6g}")

    logger.info(f"Denoiser training finished, final loss {trace[-1]:.6g}")
    return TrainingResult(net, trace, schedule)


def sample(
    net: DenoiserNet,
    schedule: NoiseSchedule,
    count: int,
    rng: RandomSource,
    eta: float = 1.0,
    k: Optional[int] = None,
) -> np.ndarray:
    """Unconditional ancestral sampling of count latents.

    ``eta`` scales sigma_t^DDPM (1 is DDPM, 0 is deterministic). With ``k`` every
    iterate after the first step is truncated to its first k coordinates.
    """
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    if not 0.0 <= eta <= 1.0:
        raise InvalidArgumentError(f"eta must lie in [0, 1], got {eta}")
    if k is not None and not 1 <= k <= net.latent_dim:
        raise InvalidIndexError(f"k must lie in [1, {net.latent_dim}], got {k}")
    z = rng.gaussian((count, net.latent_dim))
    for t in range(schedule.steps, 0, -1):
        z = reverse_step(schedule, net, z, t, eta * schedule.ddpm_sigma_at(t), rng)
        if k is not None:
            z = truncate(z, k)
    return z
