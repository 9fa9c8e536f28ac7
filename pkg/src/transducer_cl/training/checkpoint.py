"""Versioned ``.npz`` checkpoints: parameters, Adam moments, RNG and stage state."""
from __future__ import annotations

import dataclasses
import json
import os
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError, CheckpointVersionError
from ..model import ModelConfig, ParameterStore, Transducer, parameter_layout
from .elastic import ParameterSnapshot
from .optim import AdamState

FORMAT_VERSION = "transducer-cl-ckpt/1"


@dataclass
class Checkpoint:
    model: Transducer
    adam: AdamState | None = None
    rng_state: dict | None = None
    meta: dict = dataclasses.field(default_factory=dict)
    snapshot: ParameterSnapshot | None = None


def checkpoint_save(path, model: Transducer, adam: AdamState | None = None,
                    meta: dict | None = None, rng: np.random.Generator | dict | None = None,
                    snapshot: ParameterSnapshot | None = None) -> Path:
    path = Path(path)
    rng_state = rng.bit_generator.state if isinstance(rng, np.random.Generator) else rng
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "frozen": sorted(model.params.frozen),
        "adam_step": None if adam is None else adam.step,
        "rng_state": rng_state,
        "snapshot": None if snapshot is None else snapshot.names(),
        "meta": meta or {},
    }
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for p in model.params:
        arrays[f"param/{p.name}"] = p.value
    if adam is not None:
        for name in adam.m:
            arrays[f"adam_m/{name}"] = adam.m[name]
            arrays[f"adam_v/{name}"] = adam.v[name]
    if snapshot is not None:
        for name in snapshot.names():
            arrays[f"snapshot/{name}"] = np.asarray(snapshot[name])
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def _read_header(npz) -> dict:
    if "header" not in npz.files:
        raise CheckpointError("checkpoint has no header")
    try:
        header = json.loads(bytes(npz["header"]).decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {header.get('format_version')!r}, expected {FORMAT_VERSION!r}")
    return header


def checkpoint_load(path) -> Checkpoint:
    """Load a checkpoint; nothing is returned unless the whole file validates."""
    try:
        npz = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with npz:
        header = _read_header(npz)
        try:
            cfg = ModelConfig(**header["model_config"])
            params = ParameterStore()
            for name, component, shape in parameter_layout(cfg):
                value = npz[f"param/{name}"]
                if value.shape != shape:
                    raise CheckpointError(f"{name}: stored shape {value.shape} != {shape}")
                params.add(name, component, value)
            params.frozen = set(header["frozen"])
            adam = None
            if header["adam_step"] is not None:
                adam = AdamState(header["adam_step"],
                                 {n: npz[f"adam_m/{n}"].copy() for n in params.names()},
                                 {n: npz[f"adam_v/{n}"].copy() for n in params.names()})
            snapshot = None
            if header["snapshot"] is not None:
                snapshot = ParameterSnapshot({n: npz[f"snapshot/{n}"] for n in header["snapshot"]})
        except KeyError as exc:
            raise CheckpointError(f"checkpoint is missing entry {exc}") from exc
        except (ValueError, zipfile.BadZipFile) as exc:
            raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return Checkpoint(Transducer(cfg, params), adam, header["rng_state"], header["meta"], snapshot)


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
