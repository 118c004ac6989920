"""Closed-form risk of the truncated linear MAP denoiser, the optimal-k rule,
and Monte-Carlo checks of both."""
from __future__ import annotations

import logging
import math
from typing import List, NamedTuple, Tuple

import numpy as np

from app.models.family import DenoiseProblem
from app.utils.errors import InvalidArgumentError, InvalidDimensionError
from app.utils.tensor import McEstimate, RandomSource, Vector, as_vector

logger = logging.getLogger(__name__)


class OptimalK(NamedTuple):
    k: int
    rule: str  # "threshold" or "exhaustive"


class TheoryRow(NamedTuple):
    k: int
    closed_form: float
    mc_mean: float
    mc_std_error: float
    optimal: bool
    rule: str


def _mode_risks(p: DenoiseProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Per-mode risk when the mode is kept, and when it is dropped."""
    s2 = p.family.s ** 2
    kept = s2 * (s2 * p.sigma ** 2 + p.gamma ** 2) / (s2 + p.gamma) ** 2
    return kept, s2


def closed_form_mse(p: DenoiseProblem, k: int) -> float:
    p.family.check_k(k)
    kept, dropped = _mode_risks(p)
    return float(np.sum(kept[:k]) + np.sum(dropped[k:]))


def all_closed_form_mse(p: DenoiseProblem) -> np.ndarray:
    """closed_form_mse for k = 1..n, in order."""
    kept, dropped = _mode_risks(p)
    head = np.cumsum(kept)
    tail = np.concatenate((np.cumsum(dropped[::-1])[::-1][1:], [0.0]))
    return head + tail


def optimal_k_report(p: DenoiseProblem) -> OptimalK:
    """argmin_k of the closed-form risk, smallest k on ties.

    Under gamma <= sigma^2/2 the threshold rule max{k : s_k >= sqrt(sigma^2 - 2 gamma)}
    applies. E(k-1) - E(k) has the sign of s_k^2 - (sigma^2 - 2 gamma), so a mode
    exactly at the threshold ties and the strict form of the rule picks the
    smaller k. An empty qualifying set, or gamma above the hypothesis, falls back
    to the exhaustive argmin.
    """
    sigma2 = p.sigma ** 2
    s = p.family.s
    if p.gamma <= sigma2 / 2.0:
        threshold = math.sqrt(sigma2 - 2.0 * p.gamma)
        qualifying = np.nonzero(s > threshold)[0]
        if qualifying.size:
            return OptimalK(int(qualifying[-1]) + 1, "threshold")
        logger.warning(
            f"No singular value exceeds the threshold {threshold:.6g}; using exhaustive argmin"
        )
    k = int(np.argmin(all_closed_form_mse(p))) + 1
    return OptimalK(k, "exhaustive")


def optimal_k(p: DenoiseProblem) -> int:
    return optimal_k_report(p).k


def linear_map_latent(p: DenoiseProblem, k: int, y) -> Vector:
    """Minimizer z_hat of 1/2||y - G_k pad(z)||^2 + gamma/2 ||z||^2 in rotated
    coordinates: z_i = s_i w_i / (s_i^2 + gamma) with w = U^T y, zero past k."""
    p.family.check_k(k)
    y = as_vector(y, "y")
    if y.shape[0] != p.family.n:
        raise InvalidDimensionError(f"y has length {y.shape[0]}, expected {p.family.n}")
    s = p.family.s[:k]
    w = p.family.u[:, :k].T @ y
    z = np.zeros(p.family.n)
    z[:k] = s * w / (s ** 2 + p.gamma)
    return z


def linear_map_estimate(p: DenoiseProblem, k: int, y) -> Vector:
    z = linear_map_latent(p, k, y)
    return p.family.u[:, :k] @ (p.family.s[:k] * z[:k])


def mc_mse_oracle(p: DenoiseProblem, k: int, rng: RandomSource, trials: int) -> McEstimate:
    """Sample mean and standard error of ||x_hat - x0||^2 over fresh (z0, eta)."""
    if trials < 2:
        raise InvalidArgumentError(f"trials must be >= 2, got {trials}")
    p.family.check_k(k)
    fam = p.family
    n = fam.n
    g = fam.generator
    errors = np.empty(trials)
    batch = 4096
    for start in range(0, trials, batch):
        stop = min(start + batch, trials)
        z0 = rng.gaussian((stop - start, n))
        eta = rng.gaussian((stop - start, n), p.sigma)
        x0 = z0 @ g.T
        y = x0 + eta
        # batched form of linear_map_estimate
        w = y @ fam.u[:, :k]
        shrink = fam.s[:k] ** 2 / (fam.s[:k] ** 2 + p.gamma)
        x_hat = (w * shrink) @ fam.u[:, :k].T
        errors[start:stop] = np.sum((x_hat - x0) ** 2, axis=1)
    return McEstimate(float(errors.mean()), float(errors.std(ddof=1) / math.sqrt(trials)))


class TheoryController:
    """Builds the k-table of the `theory` subcommand."""

    def __init__(self, problem: DenoiseProblem):
        self.problem = problem

    def table(self, rng: RandomSource, trials: int) -> List[TheoryRow]:
        best = optimal_k_report(self.problem)
        logger.info(
            f"Theory table: n={self.problem.family.n} sigma={self.problem.sigma} "
            f"gamma={self.problem.gamma} optimal k={best.k} ({best.rule})"
        )
        rows = []
        for k, risk in enumerate(all_closed_form_mse(self.problem), start=1):
            mc = mc_mse_oracle(self.problem, k, rng.child(k), trials)
            rows.append(TheoryRow(k, float(risk), mc.mean, mc.std_error, k == best.k, best.rule))
        return rows
