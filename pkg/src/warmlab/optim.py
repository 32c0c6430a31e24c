"""Adam with bias correction, weight decay, and global gradient-norm clipping.

Defaults follow the recipe used for the large-scale warmup runs: betas
(0.9, 0.98), weight decay 0.001, clipping at a global norm of 10.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .autodiff import ContractError, NumericError
from .schedule import ConfigError

__all__ = [
    "AdamConfig",
    "AdamState",
    "ClipConfig",
    "global_grad_norm",
    "clip_global_norm",
    "adam_step",
]

# clipped gradients can come out a few ulps above max_norm; without this slack a
# second clip would rescale them again and break idempotence
CLIP_SLACK = 1e-12


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    weight_decay: float = 1e-3
    decoupled: bool = True

    def __post_init__(self):
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"optimizer.{name}", f"must lie in (0, 1), got {v!r}")
        if not self.epsilon > 0:
            raise ConfigError("optimizer.epsilon", f"must be positive, got {self.epsilon!r}")
        if not self.weight_decay >= 0:
            raise ConfigError("optimizer.weight_decay", f"must be nonnegative, got {self.weight_decay!r}")


@dataclass(frozen=True)
class ClipConfig:
    max_norm: float = 10.0

    def __post_init__(self):
        if not (self.max_norm > 0 and math.isfinite(self.max_norm)):
            raise ConfigError("optimizer.max_norm", f"must be a finite positive number, got {self.max_norm!r}")


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> AdamState:
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})

    def copy(self) -> AdamState:
        return AdamState(self.t, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()})


def global_grad_norm(grads: Iterable[np.ndarray]) -> float:
    """Euclidean norm over all gradient entries; ``inf`` if any entry is non-finite."""
    flat = [np.asarray(g, dtype=np.float64).ravel() for g in grads]
    if not flat:
        return 0.0
    v = np.concatenate(flat)
    if v.size == 0:
        return 0.0
    if not np.all(np.isfinite(v)):
        return math.inf
    scale = float(np.max(np.abs(v)))
    if scale == 0.0:
        return 0.0
    # rescale so squares neither overflow nor underflow
    return scale * math.sqrt(float(np.dot(v / scale, v / scale)))


def clip_global_norm(grads, clip: ClipConfig):
    """Scale every gradient by ``max_norm / norm`` when the global norm exceeds ``max_norm``.

    ``grads`` is a mapping or a sequence of arrays and the result has the same
    form.  Returns ``(grads, pre_clip_norm, post_clip_norm)``.
    """
    is_map = isinstance(grads, Mapping)
    arrays = list(grads.values()) if is_map else list(grads)
    pre = global_grad_norm(arrays)
    if not math.isfinite(pre):
        raise NumericError("non-finite gradient norm")
    if pre <= clip.max_norm * (1.0 + CLIP_SLACK):
        return grads, pre, pre
    scale = clip.max_norm / pre
    scaled = [np.asarray(g) * scale for g in arrays]
    post = global_grad_norm(scaled)
    if is_map:
        return dict(zip(grads.keys(), scaled)), pre, post
    return scaled, pre, post


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: AdamConfig,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update.  Inputs are left untouched; new params and state are returned.

    With ``config.decoupled`` the decay term ``lr * weight_decay * param`` is
    subtracted directly from the parameter.  Otherwise ``weight_decay * param``
    is added to the gradient before the moment updates (classic L2).
    """
    if lr < 0:
        raise ContractError(f"lr must be nonnegative, got {lr}")
    if set(params) != set(grads):
        raise ContractError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    b1, b2, eps, wd = config.beta1, config.beta2, config.epsilon, config.weight_decay
    t = state.t + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        if m.shape != p.shape or v.shape != p.shape:
            raise ContractError(f"{name}: optimizer state shape does not match parameter shape {p.shape}")
        if not config.decoupled and wd:
            g = g + wd * p
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if config.decoupled and wd:
            update = update + lr * wd * p
        new_params[name] = p - update
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(t, new_m, new_v)
