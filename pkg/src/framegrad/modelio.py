"""Build models from checkpoints and save trained ones.

The checkpoint header stores the model kind ("stan" | "cnn"), its full
config, the build seed, and pipeline extras (the training view, frame budget
for subsampled training); parameter and buffer tensors follow by name.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .cnn import CnnConfig, PatchedCnn
from .serialize import FormatError, load_checkpoint, save_checkpoint
from .stan import StanConfig, StanModel

_STAN_TUPLES = ("stage_channels", "stage_blocks", "heads_per_stage",
                "local_neighborhood", "dpe_kernel")


def _config_dict(model) -> dict:
    d = asdict(model.config)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def _stan_config(d: dict) -> StanConfig:
    d = dict(d)
    for key in _STAN_TUPLES:
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return StanConfig(**d)


def _cnn_config(d: dict) -> CnnConfig:
    d = dict(d)
    d["encoder_channels"] = tuple(d["encoder_channels"])
    return CnnConfig(**d)


def model_kind(model) -> str:
    return "stan" if isinstance(model, StanModel) else "cnn"


def save_model(path, model, extras: dict | None = None) -> None:
    tensors = {f"param.{name}": p.data for name, p in model.named_parameters()}
    tensors.update({f"buffer.{name}": b for name, b in model.named_buffers()})
    save_checkpoint(path, model_kind(model), _config_dict(model), model.seed,
                    tensors, extras=extras)


def load_model(path):
    """(model, extras) rebuilt from a checkpoint; tensors validated by name and shape."""
    header = load_checkpoint(path)
    kind = header["model_kind"]
    if kind == "stan":
        model = StanModel(_stan_config(header["config"]), header["seed"])
    elif kind == "cnn":
        model = PatchedCnn(_cnn_config(header["config"]), header["seed"])
    else:
        raise FormatError(f"unknown model kind {kind!r}")
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in header["tensor_data"].items():
        prefix, _, key = name.partition(".")
        target = params.get(key) if prefix == "param" else buffers.get(key) if prefix == "buffer" else None
        if target is None:
            raise FormatError(f"checkpoint tensor {name!r} has no destination in a {kind} model")
        dest = target.data if prefix == "param" else target
        if dest.shape != arr.shape:
            raise FormatError(
                f"checkpoint tensor {name!r} shape {arr.shape} != model shape {dest.shape}")
        dest[...] = arr.astype(dest.dtype, copy=False)
    missing = ({f"param.{n}" for n in params} | {f"buffer.{n}" for n in buffers}) \
        - set(header["tensor_data"])
    if missing:
        raise FormatError(f"checkpoint missing tensors: {sorted(missing)[:3]}...")
    model.eval()
    return model, header.get("extras", {})
