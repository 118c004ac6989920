"""Nested-dropout training for the ordered linear autoencoder and the tunable VAE."""
from __future__ import annotations

import logging
import math
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from app.models.config import OrderedTrainConfig, VaeTrainConfig
from app.models.schedule import NoiseSchedule
from app.models.networks import LOGVAR_CLAMP, Grads, Mlp, OrderedLinearAutoencoder, TunableVae
from app.models.truncation import TruncationLaw, prefix_mask, sample_ks, truncate
from app.utils.errors import InvalidArgumentError, InvalidDimensionError, InvalidIndexError, TrainingDivergedError
from app.utils.optim import GradientDescent
from app.utils.tensor import RandomSource

logger = logging.getLogger(__name__)

Autoencoder = Union[TunableVae, OrderedLinearAutoencoder]


class TrainingResult(NamedTuple):
    model: object
    loss_trace: List[float]
    schedule: Optional[NoiseSchedule] = None


def as_dataset(data, name: str = "data") -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty (count, n) array, got shape {arr.shape}")
    return arr


def _check_ks(ks: np.ndarray, d: int) -> None:
    if np.any(ks < 1) or np.any(ks > d):
        raise InvalidIndexError(f"every k must lie in [1, {d}]")


def _minibatches(count: int, batch_size: int, rng: RandomSource):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def vae_objective(model: TunableVae, x: np.ndarray, ks, eps: np.ndarray) -> Tuple[float, Dict[str, float], Grads]:
    """Batch-mean VAE loss with the nested-dropout term and its gradient.

    Per example: rec = ||x - D(z)||^2, drop = ||x - D(truncate(z, k))||^2 and
    reg = KL(N(mu, e^logvar) || N(0, I)), with the single reparameterized
    sample z = mu + exp(logvar / 2) * eps shared by rec and drop.
    """
    batch = x.shape[0]
    d = model.latent_dim
    ks = np.asarray(ks)
    _check_ks(ks, d)

    enc_out, enc_cache = model.encoder.forward(x)
    mu = enc_out[:, :d]
    raw_logvar = enc_out[:, d:]
    logvar = np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    mask = prefix_mask(ks, d)

    full, full_cache = model.decoder.forward(z)
    cut, cut_cache = model.decoder.forward(z * mask)
    full_res = full - x
    cut_res = cut - x

    rec = float(np.sum(full_res ** 2)) / batch
    drop = float(np.sum(cut_res ** 2)) / batch
    reg = float(0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar)) / batch
    total = rec + model.lambda_reg * reg + model.lambda_drop * drop

    gw_full, gb_full, gz_full = model.decoder.backward(full_cache, 2.0 * full_res / batch)
    gw_cut, gb_cut, gz_cut = model.decoder.backward(cut_cache, 2.0 * model.lambda_drop * cut_res / batch)
    g_z = gz_full + gz_cut * mask

    g_mu = g_z + model.lambda_reg * mu / batch
    g_logvar = g_z * eps * 0.5 * std + model.lambda_reg * 0.5 * (np.exp(logvar) - 1.0) / batch
    g_logvar = g_logvar * ((raw_logvar >= -LOGVAR_CLAMP) & (raw_logvar <= LOGVAR_CLAMP))
    gw_enc, gb_enc, _ = model.encoder.backward(enc_cache, np.concatenate((g_mu, g_logvar), axis=1))

    grads = {
        **Mlp.named_grads("encoder", gw_enc, gb_enc),
        **Mlp.named_grads(
            "decoder",
            [a + b for a, b in zip(gw_full, gw_cut)],
            [a + b for a, b in zip(gb_full, gb_cut)],
        ),
    }
    return total, {"rec": rec, "reg": reg, "drop": drop}, grads


def vae_loss(model: TunableVae, x, k: int, rng: RandomSource) -> Tuple[float, Dict[str, float]]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.signal_dim,):
        raise InvalidDimensionError(f"x must have length {model.signal_dim}, got shape {x.shape}")
    eps = rng.gaussian((1, model.latent_dim))
    total, parts, _ = vae_objective(model, x[None, :], [k], eps)
    return total, parts


def vae_decode_truncated(model: TunableVae, z, k: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.latent_dim:
        raise InvalidDimensionError(f"z must have length {model.latent_dim}, got shape {z.shape}")
    return model.decode(truncate(z, k))


def vae_train(data, config: VaeTrainConfig) -> TrainingResult:
    """Minibatch gradient descent on the VAE loss, fresh k and eps per example."""
    x = as_dataset(data)
    n = x.shape[1]
    law = TruncationLaw(d=config.latent_dim, p=config.law.p)
    model = TunableVae.initialize(
        n,
        config.latent_dim,
        config.hidden,
        RandomSource(config.seed, 0),
        lambda_reg=config.lambda_reg,
        lambda_drop=config.lambda_drop,
        law=law,
    )
    rng = RandomSource(config.seed, 1)
    optimizer = GradientDescent(config.step_size, config.momentum)
    params = model.parameters()
    trace: List[float] = []
    logger.info(f"Training VAE n={n} d={config.latent_dim} on {x.shape[0]} examples for {config.epochs} epochs")

    step = 0
    for epoch in range(config.epochs):
        for rows in _minibatches(x.shape[0], config.batch_size, rng):
            ks = sample_ks(law, rng, rows.shape[0])
            eps = rng.gaussian((rows.shape[0], config.latent_dim))
            total, _, grads = vae_objective(model, x[rows], ks, eps)
            if not math.isfinite(total):
                raise TrainingDivergedError(step, total)
            optimizer.step(params, grads)
            trace.append(total)
            step += 1
        logger.debug(f"epoch {epoch}: last loss {trace[-1]:.6g}")

    logger.info(f"VAE training finished after {step} steps, final loss {trace[-1]:.6g}")
    return TrainingResult(model, trace)


def ordered_objective(model: OrderedLinearAutoencoder, x: np.ndarray, ks) -> Tuple[float, Grads]:
    """Batch mean of ||x - W truncate(W^T x, k)||^2 and its gradient in W."""
    batch = x.shape[0]
    ks = np.asarray(ks)
    _check_ks(ks, model.latent_dim)
    w = model.weight
    mask = prefix_mask(ks, model.latent_dim)
    codes = (x @ w) * mask
    residual = x - codes @ w.T
    loss = float(np.sum(residual ** 2)) / batch
    grad = -2.0 / batch * (residual.T @ codes + x.T @ ((residual @ w) * mask))
    return loss, {"weight": grad}


def ordered_linear_train(data, d: int, law: TruncationLaw, config: OrderedTrainConfig) -> TrainingResult:
    x = as_dataset(data)
    n = x.shape[1]
    if n < d:
        raise InvalidDimensionError(f"latent dimension {d} exceeds signal dimension {n}")
    if law.d != d:
        raise InvalidArgumentError(f"truncation law is over {law.d} coordinates, model has {d}")
    model = OrderedLinearAutoencoder.initialize(n, d, RandomSource(config.seed, 0))
    rng = RandomSource(config.seed, 1)
    optimizer = GradientDescent(config.step_size, config.momentum)
    params = model.parameters()
    trace: List[float] = []
    logger.info(f"Training ordered linear autoencoder n={n} d={d} p={law.p}")

    step = 0
    for _ in range(config.epochs):
        for rows in _minibatches(x.shape[0], config.batch_size, rng):
            ks = sample_ks(law, rng, rows.shape[0])
            loss, grads = ordered_objective(model, x[rows], ks)
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, loss)
            optimizer.step(params, grads)
            trace.append(loss)
            step += 1

    logger.info(f"Ordered autoencoder training finished after {step} steps, final loss {trace[-1]:.6g}")
    return TrainingResult(model, trace)


def encode_dataset(model: Autoencoder, data) -> np.ndarray:
    """Deterministic latents: the posterior mean for the VAE, W^T x for the linear model."""
    x = as_dataset(data)
    if isinstance(model, TunableVae):
        mu, _ = model.encode(x)
        return mu
    return model.encode(x)


def reconstruction_error(model: Autoencoder, data, k: int) -> float:
    """Mean over examples of ||x - D(truncate(encode(x), k))||^2."""
    x = as_dataset(data)
    recon = model.decode(truncate(encode_dataset(model, x), k))
    return float(np.mean(np.sum((x - recon) ** 2, axis=1)))
