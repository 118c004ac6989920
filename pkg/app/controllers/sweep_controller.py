"""k-sweeps: synthetic data, per-run problem bundles, the sweep driver and the
experiment recipes built on it."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from app.controllers.autoencoder_controller import ordered_linear_train, vae_train
from app.controllers.inversion_controller import gradient_guided_sample, solve_latent_map, tunable_posterior_sample
from app.controllers.theory_controller import all_closed_form_mse, linear_map_estimate
from app.models.config import ExperimentConfig, InversionConfig, MapConfig, OrderedTrainConfig, VaeTrainConfig
from app.models.family import DenoiseProblem, GeneratorFamily
from app.models.networks import Decoder, DenoiserNet
from app.models.operator import ForwardOperator, OperatorKind, build_operator, identity_operator, measure
from app.models.record import ExperimentRecord, KSelection
from app.models.schedule import NoiseSchedule
from app.models.truncation import TruncationLaw
from app.services.storage_service import StorageService
from app.utils.errors import ConfigError, InvalidArgumentError, InvalidDimensionError, InvalidValueError, SweepRunError
from app.utils.metrics import mse, psnr_from_mse
from app.utils.tensor import RandomSource

logger = logging.getLogger(__name__)

# Stream ids under the sweep seed
_SIGNAL_STREAM = 2
_SOLVER_STREAM = 3


def _orthonormal(rng: RandomSource, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.gaussian((rows, cols)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def lowrank_generator(n: int, spectrum, seed: int) -> np.ndarray:
    """G = U diag(s) V^T with Haar-like U (n x r) and V (r x r) drawn from stream (seed, 0)."""
    s = np.asarray(spectrum, dtype=np.float64)
    if s.ndim != 1 or not 1 <= s.shape[0] <= n:
        raise InvalidDimensionError(f"spectrum must hold between 1 and {n} values, got shape {s.shape}")
    if np.any(s <= 0) or np.any(np.diff(s) > 0):
        raise InvalidValueError("spectrum must be positive and non-increasing")
    rng = RandomSource(seed, 0)
    u = _orthonormal(rng, n, s.shape[0])
    v = _orthonormal(rng, s.shape[0], s.shape[0])
    return (u * s) @ v.T


def synth_lowrank_dataset(n: int, spectrum, count: int, seed: int, stream: int = 1) -> np.ndarray:
    """count rows x = G z, z ~ N(0, I); G is fixed by seed, the z draws by (seed, stream)."""
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    g = lowrank_generator(n, spectrum, seed)
    z = RandomSource(seed, stream).gaussian((count, g.shape[1]))
    return z @ g.T


class Outcome(NamedTuple):
    estimate: np.ndarray
    truth: np.ndarray
    residual: float


class ProblemBundle(Protocol):
    """One inverse problem, runnable at any k; trial t fixes the signal and noise."""

    task: str
    seed: int

    def run(self, k: int, trial: int) -> Outcome: ...


class _MeasuredBundle:
    task: str
    seed: int
    operator: ForwardOperator
    sigma: float
    signals: np.ndarray

    def _observe(self, trial: int):
        truth = self.signals[trial % self.signals.shape[0]]
        rng = RandomSource(self.seed, _SIGNAL_STREAM).child(trial)
        return truth, measure(self.operator, truth, self.sigma, rng)

    def _outcome(self, estimate: np.ndarray, truth: np.ndarray, y: np.ndarray) -> Outcome:
        residual = float(np.linalg.norm(y - self.operator.apply(estimate)))
        return Outcome(estimate, truth, residual)


class LinearTheoryBundle:
    """Denoising with the closed-form truncated linear MAP estimator; signals x = G z drawn per trial."""

    def __init__(self, problem: DenoiseProblem, seed: int, task: str = "denoise"):
        self.problem = problem
        self.seed = seed
        self.task = task

    def run(self, k: int, trial: int) -> Outcome:
        fam = self.problem.family
        rng = RandomSource(self.seed, _SIGNAL_STREAM).child(trial)
        truth = fam.generator @ rng.gaussian(fam.n)
        y = truth + rng.gaussian(fam.n, self.problem.sigma)
        estimate = linear_map_estimate(self.problem, k, y)
        return Outcome(estimate, truth, float(np.linalg.norm(y - estimate)))


class MapBundle(_MeasuredBundle):
    def __init__(
        self,
        decoder: Decoder,
        operator: ForwardOperator,
        sigma: float,
        signals: np.ndarray,
        cfg: MapConfig,
        seed: int,
        task: str = "denoise",
    ):
        self.decoder = decoder
        self.operator = operator
        self.sigma = sigma
        self.signals = np.asarray(signals, dtype=np.float64)
        self.cfg = cfg
        self.seed = seed
        self.task = task

    def run(self, k: int, trial: int) -> Outcome:
        truth, measurement = self._observe(trial)
        cfg = self.cfg.model_copy(update={"k": k})
        estimate = solve_latent_map(measurement, self.decoder, cfg).x
        return self._outcome(estimate, truth, measurement.y)


class PosteriorBundle(_MeasuredBundle):
    """Diffusion posterior sampling; ``guided`` selects the gradient-guided sampler."""

    def __init__(
        self,
        decoder: Decoder,
        net: DenoiserNet,
        schedule: NoiseSchedule,
        operator: ForwardOperator,
        sigma: float,
        signals: np.ndarray,
        cfg: InversionConfig,
        seed: int,
        task: str = "denoise",
        guided: bool = False,
    ):
        self.decoder = decoder
        self.net = net
        self.schedule = schedule
        self.operator = operator
        self.sigma = sigma
        self.signals = np.asarray(signals, dtype=np.float64)
        self.cfg = cfg
        self.seed = seed
        self.task = task
        self.guided = guided

    def run(self, k: int, trial: int) -> Outcome:
        truth, measurement = self._observe(trial)
        cfg = self.cfg.model_copy(update={"k": k})
        rng = RandomSource(self.seed, _SOLVER_STREAM).child(trial)
        sampler = gradient_guided_sample if self.guided else tunable_posterior_sample
        estimate = sampler(measurement, self.decoder, self.net, self.schedule, cfg, rng)
        return self._outcome(estimate, truth, measurement.y)


def _record(bundle: ProblemBundle, k: int, trial: int, peak: float, record_timing: bool, validation: bool) -> ExperimentRecord:
    started = time.perf_counter()
    try:
        outcome = bundle.run(k, trial)
    except Exception as e:
        raise SweepRunError(k, trial, e) from e
    elapsed = (time.perf_counter() - started) * 1000.0 if record_timing else 0.0
    error = mse(outcome.estimate, outcome.truth)
    score = psnr_from_mse(error, peak)
    return ExperimentRecord(
        task=bundle.task,
        k=k,
        seed=bundle.seed,
        trial=trial,
        mse=error,
        psnr_db=score.db,
        residual=outcome.residual,
        wall_ms=elapsed,
        psnr_capped=score.capped,
        validation=validation,
    )


def sweep_k(
    bundle: ProblemBundle,
    k_values: Sequence[int],
    trials: int,
    peak: float = 1.0,
    workers: int = 1,
    record_timing: bool = False,
    validation_trials: int = 0,
) -> List[ExperimentRecord]:
    """Run every (k, trial) pair; records come back in (k, trial) order whatever the worker count.

    Trial t uses the same signal, noise and solver stream for every k.
    """
    if not k_values:
        raise InvalidArgumentError("k_values must be non-empty")
    if trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {trials}")
    jobs = [(k, trial) for k in k_values for trial in range(trials)]
    logger.info(f"Sweeping {bundle.task}: {len(k_values)} k values x {trials} trials on {workers} worker(s)")

    def job(pair: Tuple[int, int]) -> ExperimentRecord:
        k, trial = pair
        return _record(bundle, k, trial, peak, record_timing, trial < validation_trials)

    if workers <= 1:
        records = [job(pair) for pair in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, jobs))
    return records


class KSummary(NamedTuple):
    k: int
    mean_mse: float
    std_mse: float
    count: int


def summarize(records: Sequence[ExperimentRecord]) -> List[KSummary]:
    """Mean and (population) standard deviation of mse per k, ascending in k."""
    by_k: Dict[int, List[float]] = {}
    for record in records:
        by_k.setdefault(record.k, []).append(record.mse)
    return [
        KSummary(k, float(np.mean(values)), float(np.std(values)), len(values))
        for k, values in sorted(by_k.items())
    ]


def best_k(records: Sequence[ExperimentRecord]) -> int:
    """k with the lowest mean mse; ties go to the smaller k."""
    summary = summarize(records)
    if not summary:
        raise InvalidArgumentError("no records to choose from")
    return min(summary, key=lambda row: (row.mean_mse, row.k)).k


def select_k(records: Sequence[ExperimentRecord]) -> KSelection:
    """Pick k by mean MSE over the validation trials."""
    validation = [r for r in records if r.validation]
    if not validation:
        raise InvalidArgumentError("no validation records; set validation_trials > 0")
    k = best_k(validation)
    mean = next(row.mean_mse for row in summarize(validation) if row.k == k)
    logger.info(f"Selected k={k} by validation MSE (mean {mean:.6g})")
    return KSelection(k=k, mean_mse=mean)


def linear_theory_bundle(spectrum, sigma: float, gamma: float, seed: int, task: str = "denoise") -> LinearTheoryBundle:
    family = GeneratorFamily.from_spectrum(spectrum)
    return LinearTheoryBundle(DenoiseProblem(family=family, sigma=sigma, gamma=gamma), seed, task)


def map_bundle(
    decoder: Decoder,
    operator: ForwardOperator,
    sigma: float,
    signals: np.ndarray,
    cfg: MapConfig,
    seed: int,
    task: str = "denoise",
) -> MapBundle:
    return MapBundle(decoder, operator, sigma, signals, cfg, seed, task)


def posterior_bundle(
    decoder: Decoder,
    net: DenoiserNet,
    schedule: NoiseSchedule,
    operator: ForwardOperator,
    sigma: float,
    signals: np.ndarray,
    cfg: InversionConfig,
    seed: int,
    task: str = "denoise",
    guided: bool = False,
) -> PosteriorBundle:
    return PosteriorBundle(decoder, net, schedule, operator, sigma, signals, cfg, seed, task, guided)


def theory_risk_per_coordinate(bundle: LinearTheoryBundle) -> np.ndarray:
    """Closed-form E||x_hat - x||^2 / n for k = 1..n, the expectation of the recorded mse."""
    return all_closed_form_mse(bundle.problem) / bundle.problem.family.n


class UShapeReport(NamedTuple):
    records: Dict[float, List[ExperimentRecord]]
    summaries: Dict[float, List[KSummary]]
    best: Dict[float, int]
    train_loss: List[float]


def u_shape_sweep(
    sigmas: Sequence[float] = (0.25, 0.01),
    n: int = 32,
    decay: float = 0.8,
    scale: float = 2.0,
    train_count: int = 2000,
    trials: int = 20,
    seed: int = 0,
    train_config: Optional[OrderedTrainConfig] = None,
    map_config: Optional[MapConfig] = None,
    workers: int = 1,
) -> UShapeReport:
    """Denoising error versus k for a nested-dropout ordered autoencoder.

    Trains the model on x = G z with singular values scale * decay^i, then runs
    latent MLE denoising at each noise level over k = 1..n.
    """
    spectrum = scale * decay ** np.arange(1, n + 1)
    train = synth_lowrank_dataset(n, spectrum, train_count, seed)
    held_out = synth_lowrank_dataset(n, spectrum, trials, seed, stream=2)
    cfg = train_config or OrderedTrainConfig(epochs=96, batch_size=32, step_size=0.01, momentum=0.9, seed=seed)
    law = TruncationLaw(d=n, p=cfg.law.p)
    result = ordered_linear_train(train, n, law, cfg)
    map_cfg = map_config or MapConfig(gamma=0.0, steps=500, step_size=0.1)

    records: Dict[float, List[ExperimentRecord]] = {}
    summaries: Dict[float, List[KSummary]] = {}
    best: Dict[float, int] = {}
    for sigma in sigmas:
        bundle = map_bundle(result.model, identity_operator(n), sigma, held_out, map_cfg, seed, task=f"denoise_sigma_{sigma}")
        records[sigma] = sweep_k(bundle, list(range(1, n + 1)), trials, workers=workers)
        summaries[sigma] = summarize(records[sigma])
        best[sigma] = best_k(records[sigma])
        logger.info(f"sigma={sigma}: best k={best[sigma]}")
    return UShapeReport(records, summaries, best, result.loss_trace)


BASELINE_TASK = "baseline"


class BaselineReport(NamedTuple):
    tunable: List[ExperimentRecord]
    baseline: List[ExperimentRecord]
    summaries: Dict[str, List[KSummary]]


def baseline_config(config: VaeTrainConfig) -> VaeTrainConfig:
    """The fixed-complexity counterpart of a VAE run: same settings, no nested-dropout term."""
    return config.model_copy(update={"lambda_drop": 0.0})


def baseline_bundles(
    train,
    config: VaeTrainConfig,
    operator: ForwardOperator,
    sigma: float,
    signals: np.ndarray,
    map_cfg: MapConfig,
    seed: int,
    task: str = "tunable",
) -> Tuple[MapBundle, MapBundle]:
    """Train the tunable VAE and its lambda_drop = 0 baseline on the same data; MAP bundles for both."""
    tunable = vae_train(train, config).model
    fixed = vae_train(train, baseline_config(config)).model
    return (
        map_bundle(tunable, operator, sigma, signals, map_cfg, seed, task=task),
        map_bundle(fixed, operator, sigma, signals, map_cfg, seed, task=BASELINE_TASK),
    )


def baseline_sweep(
    train,
    signals: np.ndarray,
    config: VaeTrainConfig,
    operator: ForwardOperator,
    sigma: float,
    k_values: Sequence[int],
    trials: int,
    map_cfg: MapConfig,
    seed: int = 0,
    workers: int = 1,
) -> BaselineReport:
    """Sweep k for the tunable model and the fixed-complexity baseline on shared trials."""
    tunable, fixed = baseline_bundles(train, config, operator, sigma, signals, map_cfg, seed)
    tunable_records = sweep_k(tunable, k_values, trials, workers=workers)
    baseline_records = sweep_k(fixed, k_values, trials, workers=workers)
    summaries = {tunable.task: summarize(tunable_records), fixed.task: summarize(baseline_records)}
    for row_t, row_b in zip(summaries[tunable.task], summaries[fixed.task]):
        logger.info(f"k={row_t.k}: tunable mse {row_t.mean_mse:.6g}, baseline mse {row_b.mean_mse:.6g}")
    return BaselineReport(tunable_records, baseline_records, summaries)


class SweepController:
    """Builds the problem bundle an ExperimentConfig describes and runs its sweep."""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    def held_out_signals(self, n: int) -> np.ndarray:
        ds = self.config.dataset
        if ds.n != n:
            raise InvalidDimensionError(f"dataset n={ds.n} does not match the decoder's signal dimension {n}")
        return synth_lowrank_dataset(n, ds.resolved_spectrum(), self.config.trials, ds.seed, stream=2)

    def _decoder(self) -> Decoder:
        model, manifest = StorageService(self.config.model_path).load_model()
        if manifest["kind"] == "denoiser":
            raise ConfigError(f"{self.config.model_path} holds a denoiser, not a decoder")
        return model

    def _denoiser(self):
        model, manifest = StorageService(self.config.ldm_path).load_model()
        if manifest["kind"] != "denoiser":
            raise ConfigError(f"{self.config.ldm_path} does not hold a denoiser")
        return model

    def bundle(self) -> ProblemBundle:
        cfg = self.config
        if cfg.method == "closed_form":
            if cfg.operator.kind != OperatorKind.identity:
                raise InvalidArgumentError("the closed-form estimator only handles denoising (identity operator)")
            return linear_theory_bundle(cfg.spectrum, cfg.sigma, cfg.gamma, cfg.seed, cfg.task)
        decoder = self._decoder()
        operator = build_operator(cfg.operator, decoder.signal_dim)
        signals = self.held_out_signals(decoder.signal_dim)
        if cfg.method == "map":
            return map_bundle(decoder, operator, cfg.sigma, signals, cfg.map, cfg.seed, cfg.task)
        net, schedule = self._denoiser()
        return posterior_bundle(
            decoder,
            net,
            schedule,
            operator,
            cfg.sigma,
            signals,
            cfg.inversion,
            cfg.seed,
            cfg.task,
            guided=cfg.method == "guided",
        )

    def run(self) -> List[ExperimentRecord]:
        cfg = self.config
        return sweep_k(
            self.bundle(),
            cfg.k_values,
            cfg.trials,
            peak=cfg.peak,
            workers=cfg.workers,
            record_timing=cfg.record_timing,
            validation_trials=cfg.validation_trials,
        )
