import math
from typing import NamedTuple

import numpy as np

from app.utils.errors import InvalidArgumentError, InvalidDimensionError

PSNR_CAP_DB = 99.0


class Psnr(NamedTuple):
    db: float
    capped: bool


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise InvalidDimensionError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def mse(x, ref) -> float:
    """Per-coordinate mean squared error."""
    x, ref = _pair(x, ref)
    return float(np.mean((x - ref) ** 2))


def psnr_from_mse(value: float, peak: float = 1.0) -> Psnr:
    """10 log10(peak^2 / mse); a zero error is reported as the 99 dB cap."""
    if peak <= 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    if value < 0:
        raise InvalidArgumentError(f"mse must be nonnegative, got {value}")
    if value == 0:
        return Psnr(PSNR_CAP_DB, True)
    return Psnr(10.0 * math.log10(peak ** 2 / value), False)


def psnr(x, ref, peak: float = 1.0) -> Psnr:
    return psnr_from_mse(mse(x, ref), peak)
