from typing import Callable, Dict

import numpy as np
import pytest

from app.models.networks import DenoiserNet
from app.utils.tensor import RandomSource


def central_difference(loss: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of loss() in the entries of array, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        plus = loss()
        flat[i] = saved - h
        minus = loss()
        flat[i] = saved
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def gradient_check():
    """Compare analytic gradients against central differences, parameter by parameter."""

    def check(loss: Callable[[], float], params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], tol: float = 1e-4):
        assert set(grads) == set(params)
        for name, array in params.items():
            numeric = central_difference(loss, array)
            assert relative_error(grads[name], numeric) < tol, name

    return check


@pytest.fixture
def rng():
    return RandomSource(1234)


def zero_denoiser(d: int, hidden: int, steps: int) -> DenoiserNet:
    """A denoiser whose prediction is identically zero."""
    net = DenoiserNet.initialize(d, hidden, steps, RandomSource(0))
    net.mlp.weights[-1][...] = 0.0
    net.mlp.biases[-1][...] = 0.0
    return net


@pytest.fixture
def make_zero_denoiser():
    return zero_denoiser
