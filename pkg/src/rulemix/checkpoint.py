"""Versioned model checkpoints with bit-exact parameter round-trips.

A checkpoint is a .npz archive holding the format version, a JSON snapshot
of the resolved experiment config, the model layout, the loss-scale pair,
seed/epoch metadata, and every parameter tensor. The version is checked
before anything else is touched; unreadable or truncated files raise without
producing a partial model.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, UnsupportedVersionError
from .model import ModelSpec
from .train import FitResult, LossScale

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    config: dict
    scale: LossScale | None
    seed: int
    epoch: int


def _spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "task": spec.task,
        "coupling": spec.coupling,
        "shared_units": list(spec.shared_units),
        "encoder_units": list(spec.encoder_units),
        "decision_units": list(spec.decision_units),
    }


def _spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(
        input_dim=int(d["input_dim"]),
        output_dim=int(d["output_dim"]),
        task=d["task"],
        coupling=d["coupling"],
        shared_units=tuple(d["shared_units"]),
        encoder_units=tuple(d["encoder_units"]),
        decision_units=tuple(d["decision_units"]),
    )


def save_checkpoint(
    path: str | Path,
    result: FitResult,
    config: dict,
    seed: int,
) -> None:
    arrays: dict[str, np.ndarray] = {
        "version": np.array(FORMAT_VERSION, dtype=np.int64),
        "model_json": np.array(json.dumps(_spec_to_dict(result.spec), sort_keys=True)),
        "config_json": np.array(json.dumps(config, sort_keys=True)),
        "seed": np.array(seed, dtype=np.int64),
        "epoch": np.array(result.report.final_epoch, dtype=np.int64),
        "scale_rule0": np.array(result.scale.rule0 if result.scale else np.nan),
        "scale_task0": np.array(result.scale.task0 if result.scale else np.nan),
    }
    for name, value in result.params.items():
        arrays[f"param:{name}"] = value
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            if "version" not in archive:
                raise CheckpointError(f"{path}: missing version field")
            version = int(archive["version"])
            if version != FORMAT_VERSION:
                raise UnsupportedVersionError(
                    f"{path}: format version {version} unsupported (this build reads {FORMAT_VERSION})"
                )
            spec = _spec_from_dict(json.loads(str(archive["model_json"][()])))
            config = json.loads(str(archive["config_json"][()]))
            rule0 = float(archive["scale_rule0"])
            task0 = float(archive["scale_task0"])
            scale = None if np.isnan(task0) else LossScale(rule0=rule0, task0=task0)
            params = {
                key[len("param:") :]: np.array(archive[key])
                for key in archive.files
                if key.startswith("param:")
            }
            return Checkpoint(
                spec=spec,
                params=params,
                config=config,
                scale=scale,
                seed=int(archive["seed"]),
                epoch=int(archive["epoch"]),
            )
    except (zipfile.BadZipFile, OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt or unreadable checkpoint: {exc}") from exc
