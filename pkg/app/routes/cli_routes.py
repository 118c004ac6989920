import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel, ValidationError

from app.controllers.autoencoder_controller import encode_dataset, ordered_linear_train, vae_train
from app.controllers.diffusion_controller import ldm_train
from app.controllers.record_controller import RecordController
from app.controllers.sweep_controller import (
    SweepController,
    baseline_sweep,
    select_k,
    synth_lowrank_dataset,
    u_shape_sweep,
)
from app.controllers.theory_controller import TheoryController
from app.database import get_session, init_db, make_engine
from app.models.config import (
    ExperimentConfig,
    LdmTrainConfig,
    MapConfig,
    OrderedTrainConfig,
    TheoryConfig,
    VaeTrainConfig,
)
from app.models.family import DenoiseProblem, GeneratorFamily
from app.models.operator import identity_operator
from app.models.truncation import TruncationLaw
from app.services.plot_service import METRICS, render_svg
from app.services.report_service import read_records, records_csv, theory_csv, write_text
from app.services.storage_service import StorageService
from app.utils.errors import LabError, NumericalError, SweepRunError
from app.utils.tensor import RandomSource
from app.utils.tnsr import write_tensor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _int_list(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def load_config(path: Optional[str], model: Type[ConfigT], overrides: Optional[Dict] = None) -> ConfigT:
    """Parse a JSON config file (or start from defaults) and apply CLI overrides."""
    data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return model.model_validate(data)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        write_text(out, text)
    else:
        sys.stdout.write(text)


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out <directory>")
    return Path(args.out)


def handle_theory(args) -> None:
    """Handle the theory table."""
    overrides = {"spectrum": args.spectrum, "sigma": args.sigma, "gamma": args.gamma, "trials": args.trials, "seed": args.seed}
    cfg = load_config(args.config, TheoryConfig, overrides)
    problem = DenoiseProblem(family=GeneratorFamily.from_spectrum(cfg.spectrum), sigma=cfg.sigma, gamma=cfg.gamma)
    rows = TheoryController(problem).table(RandomSource(cfg.seed), cfg.trials)
    _emit(theory_csv(rows), args.out)


def handle_train_vae(args) -> None:
    """Handle VAE training."""
    out = _require_out(args)
    cfg = load_config(args.config, VaeTrainConfig, {"seed": args.seed})
    ds = cfg.dataset
    data = synth_lowrank_dataset(ds.n, ds.resolved_spectrum(), ds.count, ds.seed)
    result = vae_train(data, cfg)
    store = StorageService(out)
    store.save_model(result.model, meta={"config": cfg.model_dump(mode="json"), "steps": len(result.loss_trace)})
    write_tensor(out / "loss_trace.tnsr", result.loss_trace)


def handle_train_ordered(args) -> None:
    """Handle ordered linear autoencoder training."""
    out = _require_out(args)
    cfg = load_config(args.config, OrderedTrainConfig, {"seed": args.seed})
    ds = cfg.dataset
    data = synth_lowrank_dataset(ds.n, ds.resolved_spectrum(), ds.count, ds.seed)
    law = TruncationLaw(d=cfg.latent_dim, p=cfg.law.p)
    result = ordered_linear_train(data, cfg.latent_dim, law, cfg)
    store = StorageService(out)
    store.save_model(result.model, meta={"config": cfg.model_dump(mode="json"), "steps": len(result.loss_trace)})
    write_tensor(out / "loss_trace.tnsr", result.loss_trace)


def handle_train_ldm(args) -> None:
    """Handle latent diffusion training."""
    out = _require_out(args)
    cfg = load_config(args.config, LdmTrainConfig, {"seed": args.seed})
    if cfg.latent_source == "gaussian":
        latents = RandomSource(cfg.seed, 2).gaussian((cfg.latent_count, cfg.latent_dim))
    else:
        model, _ = StorageService(cfg.model_path).load_model()
        ds = cfg.dataset
        latents = encode_dataset(model, synth_lowrank_dataset(ds.n, ds.resolved_spectrum(), ds.count, ds.seed))
    result = ldm_train(latents, cfg)
    store = StorageService(out)
    store.save_model(
        result.model,
        meta={"config": cfg.model_dump(mode="json"), "steps": len(result.loss_trace)},
        schedule=result.schedule,
    )
    write_tensor(out / "loss_trace.tnsr", result.loss_trace)


def _experiment(args) -> ExperimentConfig:
    overrides = {
        "k_values": args.k,
        "trials": args.trials,
        "sigma": args.sigma,
        "gamma": args.gamma,
        "seed": args.seed,
        "workers": getattr(args, "workers", None),
    }
    return load_config(args.config, ExperimentConfig, overrides)


def handle_invert(args) -> None:
    """Handle a single inversion run (first k, trial 0)."""
    cfg = _experiment(args)
    cfg = ExperimentConfig.model_validate({**cfg.model_dump(), "k_values": cfg.k_values[:1], "trials": 1, "validation_trials": 0})
    records = SweepController(cfg).run()
    _emit(records_csv(records), args.out or cfg.out)
    _store(args, records, cfg)


def handle_sweep(args) -> None:
    """Handle a k-sweep."""
    cfg = _experiment(args)
    records = SweepController(cfg).run()
    out = args.out or cfg.out
    _emit(records_csv(records), out)
    if cfg.validation_trials > 0:
        choice = select_k(records)
        note = {
            "k": choice.k,
            "mean_mse": choice.mean_mse,
            "criterion": "validation mean MSE (substitute for LPIPS-based selection)",
            "validation_trials": cfg.validation_trials,
        }
        text = json.dumps(note, indent=2, sort_keys=True) + "\n"
        if out:
            write_text(f"{out}.selection.json", text)
        else:
            sys.stderr.write(text)
    _store(args, records, cfg)


def _store(args, records, cfg: ExperimentConfig) -> None:
    if not args.db:
        return
    engine = make_engine(args.db)
    init_db(engine)
    with get_session(engine) as session:
        RecordController(session).save_records(records, run_id=args.run_id or f"{cfg.task}-seed{cfg.seed}")


def handle_baseline(args) -> None:
    """Handle the tunable VAE versus its fixed-complexity baseline on denoising."""
    cfg = load_config(args.config, VaeTrainConfig, {"seed": args.seed})
    ds = cfg.dataset
    train = synth_lowrank_dataset(ds.n, ds.resolved_spectrum(), ds.count, ds.seed)
    trials = args.trials or 20
    held_out = synth_lowrank_dataset(ds.n, ds.resolved_spectrum(), trials, ds.seed, stream=2)
    k_values = args.k or list(range(1, cfg.latent_dim + 1))
    sigma = 0.1 if args.sigma is None else args.sigma
    report = baseline_sweep(
        train, held_out, cfg, identity_operator(ds.n), sigma, k_values, trials, MapConfig(), seed=cfg.seed
    )
    _emit(records_csv(report.tunable + report.baseline), args.out)


def handle_ushape(args) -> None:
    """Handle the denoising U-shape recipe."""
    report = u_shape_sweep(trials=args.trials or 20, seed=args.seed or 0)
    records = [record for sigma in sorted(report.records, reverse=True) for record in report.records[sigma]]
    _emit(records_csv(records), args.out)
    for sigma, k in sorted(report.best.items(), reverse=True):
        logger.info(f"U-shape: sigma={sigma} best k={k}")


def handle_plotdata(args) -> None:
    """Handle CSV -> SVG chart rendering."""
    records = read_records(args.input)
    _emit(render_svg(records, args.metric, args.title or ""), args.out)


def build_parser() -> CliParser:
    parser = CliParser(prog="tunelab", description="Tunable-complexity generative priors lab")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path")

    p = sub.add_parser("theory", help="closed-form risk table with Monte-Carlo check")
    common(p)
    p.add_argument("--spectrum", type=_float_list)
    p.add_argument("--sigma", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--trials", type=int)
    p.set_defaults(handler=handle_theory)

    for name, handler, text in (
        ("train-vae", handle_train_vae, "train the nested-dropout VAE"),
        ("train-ordered", handle_train_ordered, "train the ordered linear autoencoder"),
        ("train-ldm", handle_train_ldm, "train the latent denoiser"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.set_defaults(handler=handler)

    for name, handler, text in (
        ("invert", handle_invert, "single inversion run"),
        ("sweep", handle_sweep, "sweep k and write a CSV"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--k", type=_int_list, help="comma-separated k values")
        p.add_argument("--trials", type=int)
        p.add_argument("--sigma", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--db", help="SQLite run registry to store records in")
        p.add_argument("--run-id")
        p.set_defaults(handler=handler)

    p = sub.add_parser("baseline", help="tunable VAE vs its lambda_drop = 0 baseline across k")
    common(p)
    p.add_argument("--k", type=_int_list, help="comma-separated k values")
    p.add_argument("--trials", type=int)
    p.add_argument("--sigma", type=float)
    p.set_defaults(handler=handle_baseline)

    p = sub.add_parser("ushape", help="denoising error vs k at two noise levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=handle_ushape)

    p = sub.add_parser("plotdata", help="render a sweep CSV as an SVG chart")
    p.add_argument("--input", required=True, help="sweep CSV")
    p.add_argument("--metric", choices=METRICS, default="mse")
    p.add_argument("--title")
    p.add_argument("--out")
    p.set_defaults(handler=handle_plotdata)
    return parser


def _exit_code(error: BaseException) -> int:
    if isinstance(error, SweepRunError):
        return _exit_code(error.cause)
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def run_cli(argv: List[str]) -> int:
    """Parse argv, run the subcommand and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_CONFIG
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG

    handler: Callable = args.handler
    try:
        handler(args)
    except UsageError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_CONFIG
    except (LabError, ValidationError, json.JSONDecodeError, OSError) as e:
        code = _exit_code(e)
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return code
    return EXIT_OK
