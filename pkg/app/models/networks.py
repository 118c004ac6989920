"""Small numpy networks with hand-written backward passes.

Every model exposes ``parameters()``: a name -> array dict holding the live
arrays, which optimizers update in place and the storage service persists.
"""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Protocol, Tuple, Union

import numpy as np

from app.models.truncation import TruncationLaw, truncate
from app.utils.errors import InvalidDimensionError, InvalidIndexError
from app.utils.tensor import RandomSource

LOGVAR_CLAMP = 10.0
TIME_FREQUENCIES = 8

Grads = Dict[str, np.ndarray]


def _as_batch(x, width: int, name: str) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise InvalidDimensionError(f"{name} must have trailing dimension {width}, got shape {np.shape(x)}")
    return arr, single


class Decoder(Protocol):
    latent_dim: int
    signal_dim: int

    def decode(self, z) -> np.ndarray: ...

    def vjp(self, z, g) -> np.ndarray: ...


class Mlp:
    """Fully connected network: tanh after every hidden layer, affine output.

    Weights have shape (out, in); inputs are batches of rows.
    """

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialize(cls, sizes: List[int], rng: RandomSource) -> "Mlp":
        weights = [rng.gaussian((fan_out, fan_in), 1.0 / math.sqrt(fan_in)) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        return cls(weights, biases)

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        inputs = []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            a = a @ w.T + b
            if i < last:
                a = np.tanh(a)
        return a, inputs

    def backward(self, inputs: List[np.ndarray], grad_out: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray]:
        grad_w: List[np.ndarray] = [None] * len(self.weights)
        grad_b: List[np.ndarray] = [None] * len(self.weights)
        g = grad_out
        for i in reversed(range(len(self.weights))):
            grad_w[i] = g.T @ inputs[i]
            grad_b[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                # inputs[i] is the tanh output of layer i - 1
                g = g * (1.0 - inputs[i] ** 2)
        return grad_w, grad_b, g

    def parameters(self, prefix: str) -> Dict[str, np.ndarray]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"{prefix}.W{i}"] = w
            params[f"{prefix}.b{i}"] = b
        return params

    @staticmethod
    def named_grads(prefix: str, grad_w: List[np.ndarray], grad_b: List[np.ndarray]) -> Grads:
        grads = {}
        for i, (gw, gb) in enumerate(zip(grad_w, grad_b)):
            grads[f"{prefix}.W{i}"] = gw
            grads[f"{prefix}.b{i}"] = gb
        return grads

    @classmethod
    def from_parameters(cls, prefix: str, params: Dict[str, np.ndarray]) -> "Mlp":
        count = sum(1 for name in params if name.startswith(f"{prefix}.W"))
        return cls(
            [np.array(params[f"{prefix}.W{i}"]) for i in range(count)],
            [np.array(params[f"{prefix}.b{i}"]) for i in range(count)],
        )


class LinearDecoder:
    """D(z) = M z for a fixed n x d matrix M."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.signal_dim, self.latent_dim = self.matrix.shape

    def decode(self, z) -> np.ndarray:
        batch, single = _as_batch(z, self.latent_dim, "z")
        out = batch @ self.matrix.T
        return out[0] if single else out

    def vjp(self, z, g) -> np.ndarray:
        return np.asarray(g, dtype=np.float64) @ self.matrix


class OrderedLinearAutoencoder:
    """Tied-weight linear autoencoder: encode x -> W^T x, decode z -> W z."""

    def __init__(self, weight):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.signal_dim, self.latent_dim = self.weight.shape

    @classmethod
    def initialize(cls, n: int, d: int, rng: RandomSource) -> "OrderedLinearAutoencoder":
        return cls(rng.gaussian((n, d), 1.0 / math.sqrt(n)))

    def encode(self, x) -> np.ndarray:
        batch, single = _as_batch(x, self.signal_dim, "x")
        out = batch @ self.weight
        return out[0] if single else out

    def decode(self, z) -> np.ndarray:
        batch, single = _as_batch(z, self.latent_dim, "z")
        out = batch @ self.weight.T
        return out[0] if single else out

    def vjp(self, z, g) -> np.ndarray:
        return np.asarray(g, dtype=np.float64) @ self.weight

    def reconstruct(self, x, k: int) -> np.ndarray:
        return self.decode(truncate(self.encode(x), k))

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight}


class TunableVae:
    """Gaussian VAE: encoder n -> hidden -> (mu, logvar) and a mirrored decoder
    d -> hidden -> n, trained with an extra nested-dropout reconstruction term."""

    def __init__(
        self,
        encoder: Mlp,
        decoder: Mlp,
        lambda_reg: float = 1e-3,
        lambda_drop: float = 0.1,
        law: Optional[TruncationLaw] = None,
    ):
        self.encoder = encoder
        self.decoder = decoder
        self.lambda_reg = lambda_reg
        self.lambda_drop = lambda_drop
        self.signal_dim = encoder.sizes[0]
        self.latent_dim = decoder.sizes[0]
        self.law = law or TruncationLaw(d=self.latent_dim, p=0.1)
        if encoder.sizes[-1] != 2 * self.latent_dim or decoder.sizes[-1] != self.signal_dim:
            raise InvalidDimensionError("encoder must output 2d values and decoder n values")

    @classmethod
    def initialize(cls, n: int, d: int, hidden: int, rng: RandomSource, **hyper) -> "TunableVae":
        encoder = Mlp.initialize([n, hidden, 2 * d], rng)
        decoder = Mlp.initialize([d, hidden, n], rng)
        return cls(encoder, decoder, **hyper)

    def encode(self, x) -> Tuple[np.ndarray, np.ndarray]:
        batch, single = _as_batch(x, self.signal_dim, "x")
        out, _ = self.encoder.forward(batch)
        mu = out[:, : self.latent_dim]
        logvar = np.clip(out[:, self.latent_dim:], -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return (mu[0], logvar[0]) if single else (mu, logvar)

    def decode(self, z) -> np.ndarray:
        batch, single = _as_batch(z, self.latent_dim, "z")
        out, _ = self.decoder.forward(batch)
        return out[0] if single else out

    def vjp(self, z, g) -> np.ndarray:
        batch, single = _as_batch(z, self.latent_dim, "z")
        g_batch = np.asarray(g, dtype=np.float64).reshape(batch.shape[0], self.signal_dim)
        _, inputs = self.decoder.forward(batch)
        _, _, g_z = self.decoder.backward(inputs, g_batch)
        return g_z[0] if single else g_z

    def parameters(self) -> Dict[str, np.ndarray]:
        return {**self.encoder.parameters("encoder"), **self.decoder.parameters("decoder")}


class DenoiserNet:
    """Noise predictor eps_theta(z, t): MLP over [z, sinusoidal time embedding]
    with two tanh hidden layers."""

    def __init__(self, mlp: Mlp, latent_dim: int, steps: int, frequencies: int = TIME_FREQUENCIES):
        self.mlp = mlp
        self.latent_dim = latent_dim
        self.steps = steps
        self.frequencies = frequencies
        self.time_table = time_embedding_table(steps, frequencies)
        if mlp.sizes[0] != latent_dim + 2 * frequencies or mlp.sizes[-1] != latent_dim:
            raise InvalidDimensionError("denoiser input must be d + 2F wide and output d wide")

    @classmethod
    def initialize(cls, d: int, hidden: int, steps: int, rng: RandomSource, frequencies: int = TIME_FREQUENCIES) -> "DenoiserNet":
        mlp = Mlp.initialize([d + 2 * frequencies, hidden, hidden, d], rng)
        return cls(mlp, d, steps, frequencies)

    def _inputs(self, z: np.ndarray, t: Union[int, np.ndarray]) -> np.ndarray:
        ts = np.broadcast_to(np.asarray(t, dtype=np.int64), (z.shape[0],))
        if np.any(ts < 1) or np.any(ts > self.steps):
            raise InvalidIndexError(f"t must lie in [1, {self.steps}]")
        return np.concatenate((z, self.time_table[ts - 1]), axis=1)

    def forward(self, z, t) -> Tuple[np.ndarray, List[np.ndarray]]:
        batch, _ = _as_batch(z, self.latent_dim, "z")
        return self.mlp.forward(self._inputs(batch, t))

    def backward(self, cache: List[np.ndarray], grad_out: np.ndarray) -> Tuple[Grads, np.ndarray]:
        grad_w, grad_b, g_in = self.mlp.backward(cache, grad_out)
        return Mlp.named_grads("denoiser", grad_w, grad_b), g_in[:, : self.latent_dim]

    def predict(self, z, t) -> np.ndarray:
        out, _ = self.forward(z, t)
        return out[0] if np.asarray(z).ndim == 1 else out

    def input_vjp(self, z, t, g) -> np.ndarray:
        """Gradient in z of <g, eps_theta(z, t)>."""
        single = np.asarray(z).ndim == 1
        _, cache = self.forward(z, t)
        g_batch = np.asarray(g, dtype=np.float64).reshape(-1, self.latent_dim)
        _, g_z = self.backward(cache, g_batch)
        return g_z[0] if single else g_z

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.mlp.parameters("denoiser")


def time_embedding_table(steps: int, frequencies: int) -> np.ndarray:
    """Row t-1 holds [sin(t w_j), cos(t w_j)] with w_j = steps^(-j/F)."""
    t = np.arange(1, steps + 1, dtype=np.float64)[:, None]
    omega = steps ** (-np.arange(frequencies) / frequencies)
    angles = t * omega
    return np.concatenate((np.sin(angles), np.cos(angles)), axis=1)
