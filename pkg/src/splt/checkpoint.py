"""Model checkpoints: one container per checkpoint, rebuildable exactly.

The manifest carries the model kind, its full hyperparameter config, the
normalization statistics it was trained with, the gelu form, and the code
version; the payload holds every named parameter.  Loading reconstructs the
network from the stored config and then overwrites its parameters, verifying
that the stored arrays exactly match the registry the config implies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import __version__
from .autodiff import GELU_FORM
from .baselines import BaselineConfig, BcModel, DtModel
from .container import load_container, save_container
from .data import NormalizationStats
from .models import SpltConfig, SpltModel


def make_model(kind: str, config, rng: np.random.Generator):
    if kind == "splt":
        return SpltModel(config, rng)
    if kind == "bc":
        return BcModel(config, rng)
    if kind == "dt":
        return DtModel(config, rng)
    raise ValueError(f"unknown model kind {kind!r}")


def config_from_meta(kind: str, meta: dict):
    return SpltConfig.from_meta(meta) if kind == "splt" else BaselineConfig.from_meta(meta)


@dataclass
class CheckpointBundle:
    kind: str
    config: object
    stats: NormalizationStats
    model: object
    meta: dict


def save_checkpoint(path: str, kind: str, model, stats: NormalizationStats,
                    extra: dict | None = None) -> None:
    params = model.named_params()
    meta = {
        "type": "checkpoint",
        "kind": kind,
        "config": model.cfg.to_meta(),
        "stats": stats.to_meta(),
        "gelu": GELU_FORM,
        "code_version": __version__,
        "extra": extra or {},
    }
    save_container(path, meta, {name: p.data for name, p in params.items()})


def load_checkpoint(path: str, expect_kind: str | None = None,
                    expect_config: dict | None = None) -> CheckpointBundle:
    meta, arrays = load_container(path)
    if meta.get("type") != "checkpoint":
        raise ValueError(f"{path} does not hold a checkpoint")
    kind = meta["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"checkpoint kind {kind!r} does not match expected {expect_kind!r}")
    config = config_from_meta(kind, meta["config"])
    if expect_config:
        stored = meta["config"]
        for key, value in expect_config.items():
            if stored.get(key) != value:
                raise ValueError(
                    f"checkpoint hyperparameter {key}={stored.get(key)!r} does not match expected {value!r}")

    model = make_model(kind, config, np.random.default_rng(0))
    params = model.named_params()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint does not match config registry (missing={sorted(missing)}, unexpected={sorted(extra)})")
    dtype = config.np_dtype()
    for name, p in params.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise ValueError(f"parameter {name!r} has shape {arr.shape}, config implies {p.data.shape}")
        p.data = arr.astype(dtype, copy=True)
    stats = NormalizationStats.from_meta(meta["stats"])
    return CheckpointBundle(kind=kind, config=config, stats=stats, model=model, meta=meta)
