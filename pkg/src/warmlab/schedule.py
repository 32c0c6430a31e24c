"""Warmup learning-rate schedules with a shared inverse-square-root decay.

Four warmup policies are supported. They differ only for ``step < warmup_steps``;
from the peak onwards every policy decays as ``peak_lr * sqrt(warmup_steps / step)``.

    >>> cfg = ScheduleConfig(2e-4, 50_000, Exponential(1.5))
    >>> lr_at(cfg, 50_000)
    0.0002
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field
from typing import IO, NamedTuple, Union

__all__ = [
    "ConfigError",
    "ComparisonError",
    "ScheduleParseError",
    "InverseSqrtLinear",
    "PiecewiseLinear",
    "Polynomial",
    "Exponential",
    "ScheduleConfig",
    "ScheduleTable",
    "Crossover",
    "lr_at",
    "schedule_table",
    "crossovers",
    "serialize",
    "deserialize",
    "config_to_dict",
    "config_from_dict",
    "default_configs",
    "write_table_csv",
    "write_tables_csv",
]

DEFAULT_PEAK_LR = 2e-4
DEFAULT_WARMUP_STEPS = 50_000
DEFAULT_ALPHA = 1.5


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class ScheduleParseError(ConfigError):
    """Raised when a serialized schedule cannot be turned into a config."""


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class InverseSqrtLinear:
    name = "inverse_sqrt"


@dataclass(frozen=True)
class PiecewiseLinear:
    intermediate_lr: float
    intermediate_steps: int
    name = "piecewise_linear"


@dataclass(frozen=True)
class Polynomial:
    alpha: float
    name = "polynomial"


@dataclass(frozen=True)
class Exponential:
    alpha: float
    name = "exponential"


Policy = Union[InverseSqrtLinear, PiecewiseLinear, Polynomial, Exponential]
POLICIES: dict[str, type] = {
    cls.name: cls for cls in (InverseSqrtLinear, PiecewiseLinear, Polynomial, Exponential)
}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float
    warmup_steps: int
    policy: Policy = field(default_factory=InverseSqrtLinear)

    def __post_init__(self):
        if not _is_real(self.peak_lr) or not math.isfinite(self.peak_lr) or self.peak_lr <= 0:
            raise ConfigError("peak_lr", f"must be a finite positive number, got {self.peak_lr!r}")
        if not _is_int(self.warmup_steps) or self.warmup_steps < 1:
            raise ConfigError("warmup_steps", f"must be an integer >= 1, got {self.warmup_steps!r}")
        p = self.policy
        if isinstance(p, PiecewiseLinear):
            lr = p.intermediate_lr
            if not _is_real(lr) or not math.isfinite(lr) or not 0 < lr < self.peak_lr:
                raise ConfigError(
                    "policy.intermediate_lr", f"must satisfy 0 < intermediate_lr < peak_lr, got {lr!r}"
                )
            ws = p.intermediate_steps
            if not _is_int(ws) or not 0 < ws < self.warmup_steps:
                raise ConfigError(
                    "policy.intermediate_steps",
                    f"must be an integer with 0 < intermediate_steps < warmup_steps, got {ws!r}",
                )
        elif isinstance(p, (Polynomial, Exponential)):
            if not _is_real(p.alpha) or not math.isfinite(p.alpha) or p.alpha <= 0:
                raise ConfigError("policy.alpha", f"must be a finite positive number, got {p.alpha!r}")
        elif not isinstance(p, InverseSqrtLinear):
            raise ConfigError("policy", f"unknown policy {p!r}")

    @property
    def name(self) -> str:
        return self.policy.name


def default_configs(peak_lr: float = DEFAULT_PEAK_LR, warmup_steps: int = DEFAULT_WARMUP_STEPS) -> dict[str, ScheduleConfig]:
    """The four policies at their default hyperparameters.

    The piecewise policy ramps to ``peak_lr / 10`` over the first half of warmup.
    """
    return {
        "inverse_sqrt": ScheduleConfig(peak_lr, warmup_steps, InverseSqrtLinear()),
        "piecewise_linear": ScheduleConfig(
            peak_lr, warmup_steps, PiecewiseLinear(peak_lr / 10, warmup_steps // 2)
        ),
        "polynomial": ScheduleConfig(peak_lr, warmup_steps, Polynomial(DEFAULT_ALPHA)),
        "exponential": ScheduleConfig(peak_lr, warmup_steps, Exponential(DEFAULT_ALPHA)),
    }


def lr_at(config: ScheduleConfig, step: int) -> float:
    """Learning rate at an integer optimizer step."""
    if not _is_int(step) or step < 0:
        raise ConfigError("step", f"must be a nonnegative integer, got {step!r}")
    eta, w = config.peak_lr, config.warmup_steps
    if step >= w:
        return eta * math.sqrt(w / step)
    if step == 0:
        return 0.0

    p = config.policy
    x = step / w
    if isinstance(p, InverseSqrtLinear):
        lr = eta * x
    elif isinstance(p, PiecewiseLinear):
        eta1, w1 = p.intermediate_lr, p.intermediate_steps
        lr = max(eta1 * step / w1, eta1 + (eta - eta1) * (step - w1) / (w - w1))
    elif isinstance(p, Polynomial):
        lr = eta * x**p.alpha
    else:
        lr = eta * math.expm1(p.alpha * x) / math.expm1(p.alpha)
    # rounding in the piecewise branch can land one ulp above the peak
    return min(lr, eta)


class ScheduleTable(NamedTuple):
    config: ScheduleConfig
    rows: list[tuple[int, float]]

    @property
    def steps(self) -> list[int]:
        return [s for s, _ in self.rows]

    @property
    def lrs(self) -> list[float]:
        return [lr for _, lr in self.rows]


def schedule_table(config: ScheduleConfig, max_step: int, stride: int = 1) -> ScheduleTable:
    if not _is_int(stride) or stride < 1:
        raise ConfigError("stride", f"must be a positive integer, got {stride!r}")
    if not _is_int(max_step) or max_step < 0:
        raise ConfigError("max_step", f"must be a nonnegative integer, got {max_step!r}")
    return ScheduleTable(config, [(s, lr_at(config, s)) for s in range(0, max_step + 1, stride)])


class Crossover(NamedTuple):
    """A step where the sign of ``lr_a - lr_b`` flips.

    ``before`` and ``after`` are +1 when ``a`` is above ``b`` and -1 when below.
    """

    step: int
    before: int
    after: int

    @property
    def direction(self) -> str:
        return "a_above_to_below" if self.before > 0 else "a_below_to_above"


def _sign(a: float, b: float) -> int:
    diff = a - b
    if abs(diff) <= sys.float_info.epsilon * max(abs(a), abs(b)):
        return 0
    return 1 if diff > 0 else -1


def crossovers(a: ScheduleConfig, b: ScheduleConfig, start: int, stop: int) -> list[Crossover]:
    """All integer steps in ``[start, stop]`` where one schedule overtakes the other.

    Ties (equal to within one ulp of the larger value) carry no sign and are
    skipped; a crossover is reported at the first step whose sign differs from
    the last nonzero sign seen.
    """
    if a.peak_lr != b.peak_lr or a.warmup_steps != b.warmup_steps:
        raise ComparisonError(
            "schedules must share peak_lr and warmup_steps: "
            f"({a.peak_lr}, {a.warmup_steps}) vs ({b.peak_lr}, {b.warmup_steps})"
        )
    if start < 0 or stop < start:
        raise ComparisonError(f"invalid step range [{start}, {stop}]")
    found = []
    last = 0
    for step in range(start, stop + 1):
        sign = _sign(lr_at(a, step), lr_at(b, step))
        if sign == 0:
            continue
        if last and sign != last:
            found.append(Crossover(step, last, sign))
        last = sign
    return found


def config_to_dict(config: ScheduleConfig) -> dict:
    p = config.policy
    policy: dict = {"type": p.name}
    if isinstance(p, PiecewiseLinear):
        policy.update(intermediate_lr=p.intermediate_lr, intermediate_steps=p.intermediate_steps)
    elif isinstance(p, (Polynomial, Exponential)):
        policy["alpha"] = p.alpha
    return {"peak_lr": config.peak_lr, "warmup_steps": config.warmup_steps, "policy": policy}


def _require(obj: dict, key: str, path: str, kind: str):
    if key not in obj:
        raise ScheduleParseError(f"{path}{key}", "missing field")
    value = obj[key]
    ok = _is_int(value) if kind == "int" else _is_real(value)
    if not ok:
        raise ScheduleParseError(f"{path}{key}", f"expected {kind}, got {value!r}")
    return value


def config_from_dict(obj) -> ScheduleConfig:
    if not isinstance(obj, dict):
        raise ScheduleParseError("<root>", "expected an object")
    peak_lr = _require(obj, "peak_lr", "", "number")
    warmup = _require(obj, "warmup_steps", "", "int")
    pol = obj.get("policy", {"type": "inverse_sqrt"})
    if not isinstance(pol, dict):
        raise ScheduleParseError("policy", "expected an object")
    kind = pol.get("type")
    if kind not in POLICIES:
        raise ScheduleParseError("policy.type", f"unknown policy {kind!r}; expected one of {sorted(POLICIES)}")
    if kind == "piecewise_linear":
        policy = PiecewiseLinear(
            _require(pol, "intermediate_lr", "policy.", "number"),
            _require(pol, "intermediate_steps", "policy.", "int"),
        )
    elif kind in ("polynomial", "exponential"):
        policy = POLICIES[kind](_require(pol, "alpha", "policy.", "number"))
    else:
        policy = InverseSqrtLinear()
    try:
        return ScheduleConfig(peak_lr, warmup, policy)
    except ScheduleParseError:
        raise
    except ConfigError as exc:
        raise ScheduleParseError(exc.field, str(exc).split(": ", 1)[1]) from None


def serialize(config: ScheduleConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True)


def deserialize(text: str) -> ScheduleConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleParseError("<root>", f"malformed JSON: {exc}") from None
    return config_from_dict(obj)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_table_csv(table: ScheduleTable, fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["step", "lr"])
    for step, lr in table.rows:
        writer.writerow([step, _fmt(lr)])


def write_tables_csv(tables: dict[str, ScheduleTable], fp: IO[str]) -> None:
    """Overlay several tables sampled on the same step grid, one column each."""
    names = list(tables)
    grids = {tuple(t.steps) for t in tables.values()}
    if len(grids) != 1:
        raise ValueError("tables must share the same step grid")
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["step", *names])
    columns = [tables[n].lrs for n in names]
    for i, step in enumerate(tables[names[0]].steps):
        writer.writerow([step, *(_fmt(col[i]) for col in columns)])
