"""The training loop: schedule -> forward/backward -> clip -> Adam, one step at a time."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..autodiff import NumericError, Tape, softmax_cross_entropy
from ..model import ToyModel, apply, build, loss_and_grads
from ..optim import AdamState, adam_step, clip_global_norm, global_grad_norm
from ..schedule import lr_at
from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_run_config
from .data import Dataset, batch_indices, gen_dataset, split_holdout
from .detect import DIVERGED, RunVerdict, detect_divergence
from .metrics import MetricsRow, MetricsWriter, perplexity

__all__ = ["TrainResult", "train", "init_state", "evaluate", "make_datasets"]


@dataclass
class TrainResult:
    log: list[MetricsRow]
    verdict: RunVerdict
    state: TrainState
    holdout_loss: Optional[float] = None


def make_datasets(run: RunConfig) -> tuple[Dataset, Dataset]:
    d, m = run.data, run.model
    full = gen_dataset(d.seed, d.num_samples, m.input_dim, m.num_classes, d.noise_level)
    return split_holdout(full, d.holdout_fraction)


def init_state(run: RunConfig) -> TrainState:
    model = build(run.model)
    return TrainState(0, 0, model.params, AdamState.zeros_like(model.params), [], model.digest())


def evaluate(run: RunConfig, params: dict[str, np.ndarray], ds: Dataset) -> float:
    """Mean cross-entropy over a whole dataset, no label smoothing."""
    if len(ds) == 0:
        return math.nan
    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    with np.errstate(over="ignore", invalid="ignore"):
        _, logits = apply(run.model, leaves, tape.leaf(ds.x))
        return float(softmax_cross_entropy(logits, ds.y).value)


def _accumulate(run: RunConfig, model: ToyModel, train_ds: Dataset, cursor: int):
    """Average loss and gradients over ``grad_accum_steps`` micro-batches.

    Returns ``(loss, grads, overflow)`` where ``overflow`` is set when any
    forward pass produced a non-finite activation.
    """
    k = run.grad_accum_steps
    total_loss = 0.0
    total = None
    overflow = False
    for i in range(k):
        idx = batch_indices(run.data.seed, len(train_ds), run.data.batch_size, cursor + i)
        loss, grads, fwd = loss_and_grads(model, train_ds.x[idx], train_ds.y[idx], run.label_smoothing)
        overflow |= fwd.overflow
        total_loss += loss
        total = grads if total is None else {n: total[n] + grads[n] for n in total}
    if k == 1:
        return total_loss, total, overflow
    with np.errstate(over="ignore", invalid="ignore"):
        return total_loss / k, {n: g / k for n, g in total.items()}, overflow


def train(
    run: RunConfig,
    out_dir=None,
    resume_from=None,
    on_row: Optional[Callable[[MetricsRow], None]] = None,
) -> TrainResult:
    """Run ``run.total_steps`` optimizer steps (fewer if the loss goes non-finite).

    Step ``s`` (1-based) uses ``lr_at(run.schedule, s)``.  A metrics row is kept
    every ``log_every`` steps and for the step that ends a run early.  With
    ``out_dir`` the run writes ``metrics.csv``, ``verdict.json``, ``config.json``
    and checkpoints under ``checkpoints/``.
    """
    train_ds, hold_ds = make_datasets(run)
    state = load_checkpoint(resume_from, run) if resume_from is not None else init_state(run)
    log = list(state.log)

    writer = None
    ckpt_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        dump_run_config(run, out_dir / "config.json")
        metrics_fp = open(out_dir / "metrics.csv", "w", newline="")
        writer = MetricsWriter(metrics_fp)
        writer.write_all(log)

    def emit(row: MetricsRow):
        log.append(row)
        if writer is not None:
            writer.write(row)
        if on_row is not None:
            on_row(row)

    t0 = time.perf_counter()
    params, adam = state.params, state.adam
    step, cursor = state.step, state.cursor
    stopped_at = None
    try:
        while step < run.total_steps:
            step += 1
            lr = lr_at(run.schedule, step)
            loss, grads, overflow = _accumulate(run, ToyModel(run.model, params), train_ds, cursor)
            cursor += run.grad_accum_steps
            ms = int((time.perf_counter() - t0) * 1000)
            if overflow or not math.isfinite(loss):
                gn = global_grad_norm(grads.values())
                emit(MetricsRow(step, lr, loss, perplexity(loss), gn, gn, ms))
                stopped_at = step
                break
            try:
                grads, pre, post = clip_global_norm(grads, run.clip)
            except NumericError:
                emit(MetricsRow(step, lr, loss, perplexity(loss), math.inf, math.inf, ms))
                stopped_at = step
                break
            params, adam = adam_step(params, grads, adam, run.adam, lr)
            if step % run.log_every == 0:
                emit(MetricsRow(step, lr, loss, perplexity(loss), pre, post, ms))
            if ckpt_dir is not None and run.checkpoint_every and step % run.checkpoint_every == 0:
                snap = TrainState(step, cursor, params, adam, list(log), state.init_digest)
                save_checkpoint(snap, run, ckpt_dir / f"step_{step:08d}.json")
    finally:
        if writer is not None:
            metrics_fp.close()

    final = TrainState(step, cursor, params, adam, log, state.init_digest)
    verdict = detect_divergence(log, run.detector, run.total_steps) if log else RunVerdict("inconclusive")
    if stopped_at is not None:
        verdict.status = DIVERGED
        verdict.stopped_at = stopped_at
        # an overflowed forward can leave a finite loss; the stopping row is still evidence
        if not verdict.evidence or verdict.evidence[-1][0] != stopped_at:
            verdict.evidence.append((stopped_at, log[-1].grad_norm_preclip))
    holdout = evaluate(run, params, hold_ds) if len(hold_ds) else None

    if out_dir is not None:
        save_checkpoint(final, run, ckpt_dir / "final.json")
        report = verdict.to_dict()
        report["steps_completed"] = step
        report["init_digest"] = state.init_digest
        if holdout is not None:
            report["holdout_loss"] = holdout
        tmp = out_dir / "verdict.json.tmp"
        tmp.write_text(json.dumps(report, indent=2) + "\n")
        os.replace(tmp, out_dir / "verdict.json")
    return TrainResult(log, verdict, final, holdout)
