"""The tiny benchmark: a run small enough to train in well under a second."""

from __future__ import annotations

from dataclasses import replace

from ..model import StackConfig
from ..schedule import Exponential, ScheduleConfig, default_configs
from .config import RunConfig

__all__ = ["TINY_PEAK_LR", "TINY_WARMUP", "tiny_run", "policy_variants"]

# peak 1e-2 reaches a loss of about 0.15 on the default blobs within 500 steps
TINY_PEAK_LR = 1e-2
TINY_WARMUP = 100


def tiny_run(schedule: ScheduleConfig | None = None, **overrides) -> RunConfig:
    """Depth 2, width 16, 500 steps, exponential warmup over 100 steps."""
    if schedule is None:
        schedule = ScheduleConfig(TINY_PEAK_LR, TINY_WARMUP, Exponential(1.5))
    run = RunConfig(schedule=schedule, model=StackConfig(depth=2, width=16), total_steps=500)
    return replace(run, **overrides) if overrides else run


def policy_variants(peak_lr: float = TINY_PEAK_LR, warmup_steps: int = TINY_WARMUP) -> dict[str, ScheduleConfig]:
    """The four warmup policies at their default shape parameters."""
    return default_configs(peak_lr, warmup_steps)
