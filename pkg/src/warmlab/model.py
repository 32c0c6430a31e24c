"""Toy residual stack: L blocks of K residual-wrapped linear subcomponents.

Each subcomponent computes ``x <- x + relu(x) @ W + b`` or, with normalization,
``x <- x + relu(layer_norm(x)) @ W + b``.  Without normalization the residual
stream grows with every subcomponent, which is the depth effect under study.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass
from typing import IO, NamedTuple, Optional, Sequence

import numpy as np

from .autodiff import (
    ShapeError,
    Tape,
    Tensor,
    add,
    layer_norm,
    matmul,
    relu,
    residual_add,
    softmax_cross_entropy,
)
from .schedule import ConfigError

__all__ = [
    "StackConfig",
    "ToyModel",
    "Forward",
    "ProbeRow",
    "build",
    "apply",
    "forward",
    "loss_and_grads",
    "depth_gain_probe",
    "write_probe_csv",
]


@dataclass(frozen=True)
class StackConfig:
    depth: int = 2
    subcomponents_per_block: int = 2
    width: int = 16
    normalize_subcomponents: bool = False
    init_scale: float = 1.0
    seed: int = 0
    num_classes: int = 10
    input_dim: int = 8

    def __post_init__(self):
        for name in ("depth", "subcomponents_per_block", "width", "num_classes", "input_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"model.{name}", f"must be a positive integer, got {value!r}")
        if not isinstance(self.init_scale, (int, float)) or not self.init_scale > 0:
            raise ConfigError("model.init_scale", f"must be positive, got {self.init_scale!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("model.seed", f"must be an integer, got {self.seed!r}")
        if not isinstance(self.normalize_subcomponents, bool):
            raise ConfigError("model.normalize_subcomponents", "must be a boolean")

    def param_count(self) -> int:
        d, lk = self.width, self.depth * self.subcomponents_per_block
        n = self.input_dim * d + lk * (d * d + d) + d * self.num_classes + self.num_classes
        if self.normalize_subcomponents:
            n += 2 * lk * d
        return n


def _sub_names(l: int, k: int) -> str:
    return f"block{l}.sub{k}"


class ToyModel:
    def __init__(self, config: StackConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> ToyModel:
        return ToyModel(self.config, {k: v.copy() for k, v in self.params.items()})


def build(config: StackConfig) -> ToyModel:
    rng = np.random.default_rng(config.seed % 2**64)
    d, bound = config.width, config.init_scale / np.sqrt(config.width)

    def weight(*shape):
        return rng.uniform(-bound, bound, size=shape)

    params = {"input_proj": weight(config.input_dim, d)}
    for l in range(config.depth):
        for k in range(config.subcomponents_per_block):
            prefix = _sub_names(l, k)
            if config.normalize_subcomponents:
                params[f"{prefix}.norm_gain"] = np.ones(d)
                params[f"{prefix}.norm_bias"] = np.zeros(d)
            params[f"{prefix}.weight"] = weight(d, d)
            params[f"{prefix}.bias"] = np.zeros(d)
    params["head.weight"] = weight(d, config.num_classes)
    params["head.bias"] = np.zeros(config.num_classes)
    return ToyModel(config, params)


class Forward(NamedTuple):
    tape: Tape
    leaves: dict[str, Tensor]
    hidden: Tensor
    logits: Tensor

    @property
    def overflow(self) -> bool:
        return self.tape.overflow


def apply(config: StackConfig, leaves: dict[str, Tensor], x: Tensor) -> tuple[Tensor, Tensor]:
    """Run the stack on tape tensors; returns ``(stack_output, logits)``."""
    h = matmul(x, leaves["input_proj"])
    for l in range(config.depth):
        for k in range(config.subcomponents_per_block):
            prefix = _sub_names(l, k)
            u = h
            if config.normalize_subcomponents:
                u = layer_norm(u, leaves[f"{prefix}.norm_gain"], leaves[f"{prefix}.norm_bias"])
            branch = add(matmul(relu(u), leaves[f"{prefix}.weight"]), leaves[f"{prefix}.bias"])
            h = residual_add(h, branch)
    return h, add(matmul(h, leaves["head.weight"]), leaves["head.bias"])


def forward(model: ToyModel, batch, tape: Optional[Tape] = None) -> Forward:
    cfg = model.config
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != cfg.input_dim:
        raise ShapeError(f"forward: batch shape {batch.shape} does not match input_dim {cfg.input_dim}")
    tape = tape or Tape()
    leaves = {name: tape.leaf(value, name=name) for name, value in model.params.items()}
    with np.errstate(over="ignore", invalid="ignore"):
        hidden, logits = apply(cfg, leaves, tape.leaf(batch))
    return Forward(tape, leaves, hidden, logits)


def loss_and_grads(model: ToyModel, batch, labels, label_smoothing: float = 0.0):
    """Mean cross-entropy on one batch and the gradient for every parameter.

    Returns ``(loss, grads, fwd)``; ``grads`` is keyed like ``model.params``.
    """
    fwd = forward(model, batch)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = softmax_cross_entropy(fwd.logits, labels, label_smoothing)
        grads = fwd.tape.backward(loss)
    return float(loss.value), {name: grads[name] for name in model.params}, fwd


class ProbeRow(NamedTuple):
    depth: int
    act_norm: float
    grad_norm: float


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([p % 2**64 for p in parts]).generate_state(1, dtype=np.uint64)[0])


def depth_gain_probe(
    config_base: StackConfig, depths: Sequence[int], trials: int = 8, batch_size: int = 32
) -> list[ProbeRow]:
    """Mean residual-stream norm and input-projection gradient norm per depth.

    Every trial builds a fresh model from a seed derived from
    ``(config_base.seed, depth, trial)`` and runs one forward/backward pass on a
    synthetic batch fixed by ``config_base.seed``.  The activation norm is the
    mean per-example L2 norm of the stack output.
    """
    if not depths:
        raise ValueError("depths must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(_derived_seed(config_base.seed, 0xBA7C4))
    x = rng.standard_normal((batch_size, config_base.input_dim))
    y = rng.integers(0, config_base.num_classes, size=batch_size)

    rows = []
    for depth in depths:
        acts, grads = [], []
        for trial in range(trials):
            seed = _derived_seed(config_base.seed, depth, trial)
            cfg = StackConfig(**{**asdict(config_base), "depth": depth, "seed": seed})
            _, g, fwd = loss_and_grads(build(cfg), x, y)
            acts.append(float(np.linalg.norm(fwd.hidden.value, axis=1).mean()))
            grads.append(float(np.linalg.norm(g["input_proj"])))
        rows.append(ProbeRow(depth, float(np.mean(acts)), float(np.mean(grads))))
    return rows


def write_probe_csv(rows: Sequence[ProbeRow], fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["depth", "act_norm", "grad_norm"])
    for r in rows:
        writer.writerow([r.depth, f"{r.act_norm:.17g}", f"{r.grad_norm:.17g}"])
