"""A small tape-based reverse-mode autodiff engine over float64 numpy arrays.

Every primitive records its forward value together with a vector-Jacobian
product on a :class:`Tape`.  ``Tape.backward`` walks the record in reverse.

    >>> tape = Tape()
    >>> x = tape.leaf([1.0, 2.0, 3.0], name="x")
    >>> grads = tape.backward(sum_all(mul(x, x)))
    >>> grads["x"].tolist()
    [2.0, 4.0, 6.0]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "ContractError",
    "NumericError",
    "Tensor",
    "Tape",
    "add",
    "mul",
    "matmul",
    "relu",
    "layer_norm",
    "residual_add",
    "sum_all",
    "softmax_cross_entropy",
    "grad_check",
    "GradCheckReport",
    "LAYER_NORM_EPS",
]

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericError(ArithmeticError):
    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        super().__init__(message)


class Tensor:
    """Handle to a node on a tape.  The value is never mutated after recording."""

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: Tape, node_id: int, value: np.ndarray):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: str
    parents: tuple
    vjp: Optional[Callable]
    name: Optional[str] = None


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.adjoints: Optional[list[Optional[np.ndarray]]] = None
        self.overflow = False
        self.overflow_op: Optional[str] = None
        # sign patterns of every relu input, used by grad_check to spot kinks
        self.kinks: list[np.ndarray] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: Optional[str] = None) -> Tensor:
        arr = np.array(value, dtype=np.float64)
        arr.flags.writeable = False
        return self._push(_Node("leaf", (), None, name), arr)

    def _push(self, node: _Node, value: np.ndarray) -> Tensor:
        self.nodes.append(node)
        self.values.append(value)
        return Tensor(self, len(self.nodes) - 1, value)

    def record(self, op: str, value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
        for p in parents:
            if p.tape is not self:
                raise ContractError(f"{op}: operand belongs to a different tape")
        value = np.asarray(value)
        if not self.overflow and not np.all(np.isfinite(value)):
            self.overflow = True
            self.overflow_op = op
        value.flags.writeable = False
        return self._push(_Node(op, tuple(p.id for p in parents), vjp), value)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Populate adjoints for every node and return the named leaf gradients."""
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        adj: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        adj[loss.id] = np.ones_like(self.values[loss.id])
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(loss.id, -1, -1):
                g = adj[i]
                node = self.nodes[i]
                if g is None or node.vjp is None:
                    continue
                for pid, pg in zip(node.parents, node.vjp(g)):
                    if pg is None:
                        continue
                    adj[pid] = pg if adj[pid] is None else adj[pid] + pg
        for i, v in enumerate(self.values):
            if adj[i] is None:
                adj[i] = np.zeros_like(v)
        self.adjoints = adj
        return {n.name: adj[i] for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name is not None}

    def grad(self, t: Tensor) -> np.ndarray:
        if self.adjoints is None:
            raise ContractError("backward has not been run on this tape")
        return self.adjoints[t.id]


def _quiet():
    return np.errstate(over="ignore", invalid="ignore")


def _check_same(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector added to every row of ``a``."""
    if a.shape != b.shape and not (a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]):
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    with _quiet():
        out = a.value + b.value
    if a.shape == b.shape:
        return a.tape.record("add", out, (a, b), lambda g: (g, g))
    return a.tape.record("add_bias", out, (a, b), lambda g: (g, g.sum(axis=0)))


def residual_add(x: Tensor, fx: Tensor) -> Tensor:
    """``x + f(x)`` for a residual branch; shapes must match exactly."""
    _check_same("residual_add", x, fx)
    with _quiet():
        out = x.value + fx.value
    return x.tape.record("residual_add", out, (x, fx), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    av, bv = a.value, b.value
    with _quiet():
        out = av * bv
    return a.tape.record("mul", out, (a, b), lambda g: (g * bv, g * av))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    with _quiet():
        out = av @ bv
    return a.tape.record("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(a: Tensor) -> Tensor:
    av = a.value
    a.tape.kinks.append(np.sign(av))
    mask = av > 0
    return a.tape.record("relu", np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    av = a.value
    with _quiet():
        out = np.array(av.sum())
    return a.tape.record("sum", out, (a,), lambda g: (np.full_like(av, g),))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each row of an ``[n, d]`` tensor, then scale by ``gain`` and shift by ``bias``."""
    if a.value.ndim != 2:
        raise ShapeError(f"layer_norm: expected a 2-d input, got {a.shape}")
    d = a.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: shape mismatch {a.shape} vs gain {gain.shape}, bias {bias.shape}")
    x = a.value
    with np.errstate(over="ignore", invalid="ignore"):
        centered = x - x.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
        xhat = centered * inv_std
        out = xhat * gain.value + bias.value
    gv = gain.value

    def vjp(g):
        dxhat = g * gv
        dx = inv_std * (
            dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return a.tape.record("layer_norm", out, (a, gain, bias), vjp)


def softmax_cross_entropy(logits: Tensor, labels, label_smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy of ``[n, C]`` logits against integer class labels.

    With ``label_smoothing`` = eps the target puts ``1 - eps`` on the label and
    spreads ``eps`` uniformly over all classes.
    """
    z = logits.value
    if z.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected [n, C] logits, got {logits.shape}")
    n, c = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: shape mismatch {logits.shape} vs labels {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError("labels must be integers")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError("label_smoothing must lie in [0, 1)")

    with np.errstate(over="ignore", invalid="ignore"):
        shifted = z - z.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        target = np.full((n, c), label_smoothing / c)
        target[np.arange(n), labels] += 1.0 - label_smoothing
        loss = np.array(-(target * log_probs).sum() / n)
        probs = np.exp(log_probs)

    return logits.tape.record("softmax_xent", loss, (logits,), lambda g: (g * (probs - target) / n,))


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_error: float
    max_rel_error: float
    passed: bool
    tol: float
    excluded: list[int] = field(default_factory=list)

    @property
    def checked(self) -> int:
        return self.analytic.size - len(self.excluded)


def _evaluate(f, arrays):
    tape = Tape()
    leaves = [tape.leaf(a, name=f"arg{i}") for i, a in enumerate(arrays)]
    out = f(tape, *leaves)
    if out.value.size != 1:
        raise ContractError(f"function must be scalar-valued, got shape {out.shape}")
    return tape, leaves, out


def grad_check(
    f: Callable[..., Tensor],
    point,
    h: float = 1e-5,
    tol: float = 1e-4,
    rel_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    ``f(tape, *leaves)`` must build a scalar on the given tape.  ``point`` is an
    array or a sequence of arrays, one per leaf.  Coordinates are indexed over
    the concatenation of all flattened arrays.  A coordinate whose ±h probe
    changes the sign pattern of any relu input straddles a kink and is
    excluded.  Relative error is ``|a - n| / max(|a|, |n|, rel_floor)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(point, np.ndarray) or not isinstance(point, (list, tuple)):
        point = [point]
    arrays = [np.array(p, dtype=np.float64) for p in point]

    tape, leaves, out = _evaluate(f, arrays)
    if not np.isfinite(out.value):
        raise NumericError("non-finite function value at the base point")
    tape.backward(out)
    analytic = np.concatenate([tape.grad(t).ravel() for t in leaves])
    base_kinks = tape.kinks
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError(f"non-finite analytic gradient at coordinate {bad}", bad)

    offsets = np.cumsum([0] + [a.size for a in arrays])
    numeric = np.zeros_like(analytic)
    excluded = []
    for j in range(analytic.size):
        k = int(np.searchsorted(offsets, j, side="right") - 1)
        flat = arrays[k].reshape(-1)
        orig = flat[j - offsets[k]]
        vals = []
        kinked = False
        for delta in (h, -h):
            flat[j - offsets[k]] = orig + delta
            probe, _, pout = _evaluate(f, arrays)
            vals.append(float(pout.value))
            if len(probe.kinks) != len(base_kinks) or any(
                not np.array_equal(p, b) for p, b in zip(probe.kinks, base_kinks)
            ):
                kinked = True
        flat[j - offsets[k]] = orig
        if not all(np.isfinite(vals)):
            raise NumericError(f"non-finite function value probing coordinate {j}", j)
        numeric[j] = (vals[0] - vals[1]) / (2 * h)
        if kinked:
            excluded.append(j)

    mask = np.ones(analytic.size, dtype=bool)
    mask[excluded] = False
    if mask.any():
        diff = np.abs(analytic - numeric)[mask]
        scale = np.maximum(np.maximum(np.abs(analytic[mask]), np.abs(numeric[mask])), rel_floor)
        max_abs = float(diff.max())
        max_rel = float((diff / scale).max())
    else:
        max_abs = max_rel = 0.0
    return GradCheckReport(analytic, numeric, max_abs, max_rel, max_rel < tol, tol, excluded)
