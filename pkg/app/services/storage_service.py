import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from app.models.networks import DenoiserNet, LinearDecoder, Mlp, OrderedLinearAutoencoder, TunableVae
from app.models.operator import ForwardOperator, OperatorKind
from app.models.schedule import NoiseSchedule
from app.models.truncation import TruncationLaw
from app.utils.errors import ConfigError
from app.utils.tnsr import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def _model_kind(model) -> str:
    if isinstance(model, TunableVae):
        return "vae"
    if isinstance(model, OrderedLinearAutoencoder):
        return "ordered_linear"
    if isinstance(model, DenoiserNet):
        return "denoiser"
    if isinstance(model, LinearDecoder):
        return "linear"
    raise ConfigError(f"Cannot persist objects of type {type(model).__name__}")


def _parameters(model) -> Dict[str, np.ndarray]:
    if isinstance(model, LinearDecoder):
        return {"matrix": model.matrix}
    return model.parameters()


class StorageService:
    """Directory-per-artifact persistence: one TNSR file per array plus manifest.json."""

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)

    def _write_manifest(self, manifest: Dict[str, Any]) -> None:
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        (self.directory / MANIFEST).write_text(text, encoding="utf-8", newline="\n")

    def read_manifest(self) -> Dict[str, Any]:
        path = self.directory / MANIFEST
        if not path.exists():
            raise FileNotFoundError(f"No {MANIFEST} in {self.directory}")
        return json.loads(path.read_text(encoding="utf-8"))

    def _write_arrays(self, arrays: Dict[str, np.ndarray]) -> Dict[str, str]:
        files = {}
        for name, array in sorted(arrays.items()):
            filename = f"{name}.tnsr"
            write_tensor(self.directory / filename, array)
            files[name] = filename
        return files

    def _read_arrays(self, files: Dict[str, str]) -> Dict[str, np.ndarray]:
        return {name: read_tensor(self.directory / filename) for name, filename in files.items()}

    def save_model(self, model, meta: Optional[Dict[str, Any]] = None, schedule: Optional[NoiseSchedule] = None) -> Path:
        """Persist a decoder or denoiser; meta holds training settings for the manifest."""
        self.directory.mkdir(parents=True, exist_ok=True)
        kind = _model_kind(model)
        arrays = dict(_parameters(model))
        manifest: Dict[str, Any] = {"format": FORMAT_VERSION, "kind": kind, "meta": meta or {}}
        if kind == "vae":
            manifest.update(
                encoder_sizes=model.encoder.sizes,
                decoder_sizes=model.decoder.sizes,
                lambda_reg=model.lambda_reg,
                lambda_drop=model.lambda_drop,
                law={"d": model.law.d, "p": model.law.p},
            )
        elif kind == "denoiser":
            if schedule is None:
                raise ConfigError("a denoiser is saved together with its noise schedule")
            arrays["schedule.beta"] = schedule.beta
            manifest.update(
                sizes=model.mlp.sizes,
                latent_dim=model.latent_dim,
                steps=model.steps,
                frequencies=model.frequencies,
            )
        manifest["tensors"] = self._write_arrays(arrays)
        self._write_manifest(manifest)
        logger.info(f"Saved {kind} model to {self.directory}")
        return self.directory

    def load_model(self) -> Tuple[Any, Dict[str, Any]]:
        """Returns (model, manifest); denoisers come back as (net, schedule)."""
        manifest = self.read_manifest()
        arrays = self._read_arrays(manifest.get("tensors", {}))
        kind = manifest.get("kind")
        try:
            if kind == "vae":
                law = TruncationLaw(**manifest["law"])
                model = TunableVae(
                    Mlp.from_parameters("encoder", arrays),
                    Mlp.from_parameters("decoder", arrays),
                    lambda_reg=manifest["lambda_reg"],
                    lambda_drop=manifest["lambda_drop"],
                    law=law,
                )
            elif kind == "ordered_linear":
                model = OrderedLinearAutoencoder(arrays["weight"])
            elif kind == "linear":
                model = LinearDecoder(arrays["matrix"])
            elif kind == "denoiser":
                net = DenoiserNet(
                    Mlp.from_parameters("denoiser", arrays),
                    manifest["latent_dim"],
                    manifest["steps"],
                    manifest["frequencies"],
                )
                model = (net, NoiseSchedule.from_betas(arrays["schedule.beta"]))
            else:
                raise ConfigError(f"Unknown model kind {kind!r} in {self.directory}")
        except KeyError as e:
            raise ConfigError(f"Manifest in {self.directory} is missing {e}") from e
        logger.info(f"Loaded {kind} model from {self.directory}")
        return model, manifest

    def save_operator(self, op: ForwardOperator) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        arrays = {
            name: np.asarray(value, dtype=np.float64)
            for name, value in (("matrix", op.matrix), ("mask", op.mask), ("kernel", op.kernel), ("signs", op.signs))
            if value is not None
        }
        manifest = {"format": FORMAT_VERSION, "kind": "operator", "operator": op.descriptor()}
        manifest["tensors"] = self._write_arrays(arrays)
        self._write_manifest(manifest)
        return self.directory

    def load_operator(self) -> ForwardOperator:
        manifest = self.read_manifest()
        if manifest.get("kind") != "operator":
            raise ConfigError(f"{self.directory} does not hold an operator")
        arrays = self._read_arrays(manifest.get("tensors", {}))
        if "mask" in arrays:
            arrays["mask"] = arrays["mask"] > 0.5
        desc = manifest["operator"]
        return ForwardOperator(
            kind=OperatorKind(desc["kind"]),
            m=desc["m"],
            n=desc["n"],
            seed=desc.get("seed"),
            params=desc.get("params", {}),
            **arrays,
        )
