"""Run configuration: one JSON document describing a complete training run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from ..model import StackConfig
from ..optim import AdamConfig, ClipConfig
from ..schedule import ConfigError, ScheduleConfig, config_from_dict, config_to_dict

__all__ = [
    "DataConfig",
    "DetectorConfig",
    "RunConfig",
    "run_config_from_dict",
    "run_config_to_dict",
    "load_run_config",
    "dump_run_config",
]


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    num_samples: int = 512
    batch_size: int = 32
    noise_level: float = 1.0
    holdout_fraction: float = 0.0

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("data.seed", f"must be an integer, got {self.seed!r}")
        if not isinstance(self.num_samples, int) or self.num_samples < 1:
            raise ConfigError("data.num_samples", f"must be a positive integer, got {self.num_samples!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError("data.batch_size", f"must be a positive integer, got {self.batch_size!r}")
        if not (isinstance(self.noise_level, (int, float)) and self.noise_level >= 0):
            raise ConfigError("data.noise_level", f"must be nonnegative, got {self.noise_level!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("data.holdout_fraction", f"must lie in [0, 1), got {self.holdout_fraction!r}")


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds for reading divergence off a gradient-norm trace.

    ``burn_in_steps=None`` means 10% of the run length.
    """

    spike_threshold: float = 100.0
    baseline_threshold: float = 25.0
    burn_in_steps: Optional[int] = None
    min_spikes: int = 1

    def __post_init__(self):
        if not (self.baseline_threshold > 0 and self.spike_threshold > self.baseline_threshold):
            raise ConfigError(
                "detector.spike_threshold",
                f"need spike_threshold > baseline_threshold > 0, got {self.spike_threshold!r}, {self.baseline_threshold!r}",
            )
        if self.burn_in_steps is not None and (not isinstance(self.burn_in_steps, int) or self.burn_in_steps < 0):
            raise ConfigError("detector.burn_in_steps", f"must be a nonnegative integer, got {self.burn_in_steps!r}")
        if not isinstance(self.min_spikes, int) or self.min_spikes < 1:
            raise ConfigError("detector.min_spikes", f"must be a positive integer, got {self.min_spikes!r}")

    def burn_in_for(self, total_steps: int) -> int:
        return self.burn_in_steps if self.burn_in_steps is not None else total_steps // 10


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig
    model: StackConfig = field(default_factory=StackConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    clip: ClipConfig = field(default_factory=ClipConfig)
    data: DataConfig = field(default_factory=DataConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    total_steps: int = 500
    log_every: int = 1
    checkpoint_every: int = 0
    label_smoothing: float = 0.0
    grad_accum_steps: int = 1

    def __post_init__(self):
        for name, low in (("total_steps", 1), ("log_every", 1), ("checkpoint_every", 0), ("grad_accum_steps", 1)):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < low:
                raise ConfigError(name, f"must be an integer >= {low}, got {v!r}")
        if not (isinstance(self.label_smoothing, (int, float)) and 0.0 <= self.label_smoothing < 1.0):
            raise ConfigError("label_smoothing", f"must lie in [0, 1), got {self.label_smoothing!r}")
        if self.data.num_samples < self.model.num_classes:
            raise ConfigError("data.num_samples", "must be at least model.num_classes")

    def fingerprint(self) -> str:
        """Hash of every field that influences the trajectory (not loop bookkeeping)."""
        d = run_config_to_dict(self)
        for key in ("total_steps", "log_every", "checkpoint_every", "detector"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_OPTIMIZER_KEYS = {"beta1", "beta2", "epsilon", "weight_decay", "decoupled_weight_decay", "clip_norm"}


def run_config_to_dict(run: RunConfig) -> dict:
    return {
        "schedule": config_to_dict(run.schedule),
        "optimizer": {
            "beta1": run.adam.beta1,
            "beta2": run.adam.beta2,
            "epsilon": run.adam.epsilon,
            "weight_decay": run.adam.weight_decay,
            "decoupled_weight_decay": run.adam.decoupled,
            "clip_norm": run.clip.max_norm,
        },
        "model": asdict(run.model),
        "data": asdict(run.data),
        "detector": asdict(run.detector),
        "total_steps": run.total_steps,
        "log_every": run.log_every,
        "checkpoint_every": run.checkpoint_every,
        "label_smoothing": run.label_smoothing,
        "grad_accum_steps": run.grad_accum_steps,
    }


def _section(obj: dict, key: str, cls):
    raw = obj.get(key, {})
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected an object")
    allowed = {f.name for f in fields(cls)}
    kwargs = {}
    for k, v in raw.items():
        if k not in allowed:
            raise ConfigError(f"{key}.{k}", "unknown field")
        kwargs[k] = v
    return cls(**kwargs)


_TOP_KEYS = {
    "schedule", "optimizer", "model", "data", "detector", "total_steps",
    "log_every", "checkpoint_every", "label_smoothing", "grad_accum_steps",
}


def run_config_from_dict(obj) -> RunConfig:
    try:
        return _parse(obj)
    except TypeError as exc:
        # wrong value types surface as TypeErrors from the dataclass validators
        raise ConfigError("<root>", str(exc)) from None


def _parse(obj) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("<root>", "expected an object")
    for k in obj:
        if k not in _TOP_KEYS:
            raise ConfigError(k, "unknown field")
    if "schedule" not in obj:
        raise ConfigError("schedule", "missing field")
    try:
        schedule = config_from_dict(obj["schedule"])
    except ConfigError as exc:
        raise ConfigError(f"schedule.{exc.field}", str(exc).split(": ", 1)[1]) from None

    opt = obj.get("optimizer", {})
    if not isinstance(opt, dict):
        raise ConfigError("optimizer", "expected an object")
    for k in opt:
        if k not in _OPTIMIZER_KEYS:
            raise ConfigError(f"optimizer.{k}", "unknown field")
    adam_kwargs = {k: opt[k] for k in ("beta1", "beta2", "epsilon", "weight_decay") if k in opt}
    if "decoupled_weight_decay" in opt:
        adam_kwargs["decoupled"] = opt["decoupled_weight_decay"]
    adam = AdamConfig(**adam_kwargs)
    clip = ClipConfig(opt["clip_norm"]) if "clip_norm" in opt else ClipConfig()

    loop = {k: obj[k] for k in ("total_steps", "log_every", "checkpoint_every", "label_smoothing", "grad_accum_steps") if k in obj}
    return RunConfig(
        schedule=schedule,
        model=_section(obj, "model", StackConfig),
        adam=adam,
        clip=clip,
        data=_section(obj, "data", DataConfig),
        detector=_section(obj, "detector", DetectorConfig),
        **loop,
    )


def load_run_config(path) -> RunConfig:
    with open(path) as fp:
        try:
            obj = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"malformed JSON: {exc}") from None
    return run_config_from_dict(obj)


def dump_run_config(run: RunConfig, path) -> None:
    with open(path, "w") as fp:
        json.dump(run_config_to_dict(run), fp, indent=2)
        fp.write("\n")

