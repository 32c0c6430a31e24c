"""Versioned JSON checkpoints with bit-exact float64 payloads."""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..optim import AdamState
from .config import RunConfig, run_config_to_dict
from .metrics import MetricsRow

__all__ = ["TrainState", "CheckpointError", "save_checkpoint", "load_checkpoint", "state_to_dict", "state_from_dict"]

FORMAT = "warmlab-checkpoint"
VERSION = 1
# config sections that must match for a resume to reproduce the trajectory
_TRAJECTORY_FIELDS = ("schedule", "optimizer", "model", "data", "label_smoothing", "grad_accum_steps")


class CheckpointError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class TrainState:
    """Everything mutable in a run.  ``cursor`` counts micro-batches consumed."""

    step: int
    cursor: int
    params: dict[str, np.ndarray]
    adam: AdamState
    log: list[MetricsRow] = field(default_factory=list)
    init_digest: str = ""


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def state_to_dict(state: TrainState, run: RunConfig) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "config_hash": run.fingerprint(),
        "config": run_config_to_dict(run),
        "step": state.step,
        "cursor": state.cursor,
        "init_digest": state.init_digest,
        "params": {k: _encode(v) for k, v in state.params.items()},
        "adam": {
            "t": state.adam.t,
            "m": {k: _encode(v) for k, v in state.adam.m.items()},
            "v": {k: _encode(v) for k, v in state.adam.v.items()},
        },
        "log": [list(r) for r in state.log],
    }


def state_from_dict(obj: dict, run: Optional[RunConfig] = None) -> TrainState:
    if obj.get("format") != FORMAT:
        raise CheckpointError("format", f"not a {FORMAT} file")
    if obj.get("version") != VERSION:
        raise CheckpointError("version", f"expected {VERSION}, got {obj.get('version')!r}")
    if run is not None and obj.get("config_hash") != run.fingerprint():
        saved = obj.get("config", {})
        current = run_config_to_dict(run)
        for name in _TRAJECTORY_FIELDS:
            if saved.get(name) != current[name]:
                raise CheckpointError(name, "run config differs from the checkpoint")
        raise CheckpointError("config_hash", "run config differs from the checkpoint")
    adam = obj["adam"]
    return TrainState(
        step=obj["step"],
        cursor=obj["cursor"],
        params={k: _decode(v) for k, v in obj["params"].items()},
        adam=AdamState(adam["t"], {k: _decode(v) for k, v in adam["m"].items()}, {k: _decode(v) for k, v in adam["v"].items()}),
        log=[MetricsRow(int(r[0]), *map(float, r[1:6]), int(r[6])) for r in obj["log"]],
        init_digest=obj.get("init_digest", ""),
    )


def save_checkpoint(state: TrainState, run: RunConfig, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fp:
        json.dump(state_to_dict(state, run), fp)
    os.replace(tmp, path)


def load_checkpoint(path, run: Optional[RunConfig] = None) -> TrainState:
    with open(path) as fp:
        try:
            obj = json.load(fp)
        except json.JSONDecodeError as exc:
            raise CheckpointError("<root>", f"malformed checkpoint: {exc}") from None
    return state_from_dict(obj, run)
