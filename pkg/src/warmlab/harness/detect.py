"""Classify a run from its gradient-norm trace.

Healthy runs keep the pre-clip gradient norm low after the first steps;
runs that fail to converge show isolated norms an order of magnitude higher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..autodiff import ContractError
from .config import DetectorConfig
from .metrics import MetricsRow

__all__ = ["RunVerdict", "detect_divergence", "CONVERGED", "DIVERGED", "INCONCLUSIVE"]

CONVERGED, DIVERGED, INCONCLUSIVE = "converged", "diverged", "inconclusive"


@dataclass
class RunVerdict:
    status: str
    evidence: list[tuple[int, float]] = field(default_factory=list)
    final_loss: float = math.nan
    burn_in_steps: int = 0
    stopped_at: Optional[int] = None

    @property
    def first_spike_step(self) -> Optional[int]:
        return self.evidence[0][0] if self.evidence else None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "evidence": [{"step": s, "grad_norm": g} for s, g in self.evidence],
            "final_loss": self.final_loss,
            "first_spike_step": self.first_spike_step,
            "burn_in_steps": self.burn_in_steps,
            "stopped_at": self.stopped_at,
        }


def detect_divergence(
    log: Sequence[MetricsRow], det: DetectorConfig = DetectorConfig(), total_steps: Optional[int] = None
) -> RunVerdict:
    """Three-way verdict over a metrics log.

    diverged:     at least ``min_spikes`` rows past burn-in with pre-clip norm above
                  ``spike_threshold``, or any non-finite loss or gradient norm
    converged:    every row past burn-in at or below ``baseline_threshold`` and the
                  last loss below the first
    inconclusive: anything else

    Rows with a non-finite loss or norm count as evidence even inside burn-in.
    """
    if not log:
        raise ContractError("cannot classify an empty metrics log")
    burn_in = det.burn_in_for(total_steps if total_steps is not None else log[-1].step)
    after = [r for r in log if r.step > burn_in]

    evidence = []
    non_finite = False
    for r in log:
        bad = not (math.isfinite(r.loss) and math.isfinite(r.grad_norm_preclip))
        non_finite |= bad
        if bad or (r.step > burn_in and r.grad_norm_preclip > det.spike_threshold):
            evidence.append((r.step, r.grad_norm_preclip))
    spikes_after = sum(1 for r in after if r.grad_norm_preclip > det.spike_threshold)

    final_loss = log[-1].loss
    if non_finite or spikes_after >= det.min_spikes:
        status = DIVERGED
    elif all(r.grad_norm_preclip <= det.baseline_threshold for r in after) and final_loss < log[0].loss:
        status = CONVERGED
    else:
        status = INCONCLUSIVE
    return RunVerdict(status, evidence, final_loss, burn_in)
