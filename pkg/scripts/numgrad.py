"""
Reverse-mode automatic differentiation for AdAuctionLab.

A deliberately small engine over dense float64 numpy arrays:
- Tensor: an array plus a requires_grad flag and a grad buffer
- Tape: context manager recording every primitive whose inputs need gradients
- backward(): one reverse sweep over a tape, leaving dLoss/dParam on leaves
- SGD / Adam optimizers

Usage:
    with Tape() as tape:
        loss = model_loss(params)
    backward(tape, loss)
    optimizer.step()

A tape belongs to exactly one forward pass. Running backward twice on the
same tape raises TapeError instead of silently accumulating.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


class TapeError(ValueError):
    """Raised on an invalid use of a computation tape."""


# ============================================================================
# Tensor and Tape
# ============================================================================

class Tensor:
    """Dense float64 array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    # ndarray (op) Tensor defers to the Tensor operator instead of building an object array
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar -- every operator maps to one primitive below.
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return index(self, key)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)


@dataclass
class _Record:
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "numgrad_active_tape", default=None
)


class Tape:
    """
    Ordered record of the primitives executed during one forward pass.

    Records are appended in execution order, so every node's inputs precede
    it. The active tape is held in a context variable, which lets independent
    tapes run in separate threads over shared read-only parameters.
    """

    def __init__(self) -> None:
        self.records: List[_Record] = []
        self.consumed = False
        self._produced: set[int] = set()
        self._leaves: Dict[int, Tensor] = {}
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise TapeError("Tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, output: Tensor, inputs: Tuple[Tensor, ...], vjp) -> None:
        if self.consumed:
            raise TapeError("Cannot record onto a tape that has already been differentiated")
        for tensor in inputs:
            if tensor.requires_grad and id(tensor) not in self._produced:
                self._leaves[id(tensor)] = tensor
        self._produced.add(id(output))
        self.records.append(_Record(op, output, inputs, vjp))

    @property
    def leaves(self) -> List[Tensor]:
        """Tensors that required gradients but were not produced on this tape."""
        return list(self._leaves.values())


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def backward(tape: Tape, loss: Tensor) -> None:
    """
    Propagate dLoss/dx through the tape in reverse order.

    Leaf tensors with requires_grad receive their gradient in ``.grad``
    (added to any gradient already present, so several tapes can be reduced
    into one optimizer update).

    Raises:
        ShapeError: If the loss is not a scalar
        TapeError: If this tape was already differentiated
    """
    if loss.size != 1:
        raise ShapeError(f"Loss must be a scalar, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("backward() was already called on this tape; run a new forward pass")
    tape.consumed = True

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        upstream = grads.pop(id(rec.output), None)
        if upstream is None:
            continue
        for tensor, g in zip(rec.inputs, rec.vjp(upstream)):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + g if key in grads else g

    leaves = tape.leaves
    if loss.requires_grad and id(loss) not in tape._produced:
        leaves.append(loss)
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        g = np.array(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


# ============================================================================
# Primitive plumbing
# ============================================================================

def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, value: np.ndarray, inputs: Tuple[Tensor, ...], vjp) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        tape.record(op, out, inputs, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


# ============================================================================
# Elementwise arithmetic
# ============================================================================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _apply("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _apply("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _apply("mul", a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    value = a.data / b.data
    return _apply("div", value, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * value / b.data, b.shape)))


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _apply("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product over the last two axes (numpy matmul semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with at least 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ ({a.shape} @ {b.shape}: {a.shape[-1]} != {b.shape[-2]})"
        )
    try:
        value = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _apply("matmul", value, (a, b), vjp)


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    value = np.tanh(a.data)
    return _apply("tanh", value, (a,), lambda g: (g * (1.0 - value * value),))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    # tanh form is overflow-free for large |x|
    value = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _apply("sigmoid", value, (a,), lambda g: (g * value * (1.0 - value),))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    value = np.exp(a.data)
    return _apply("exp", value, (a,), lambda g: (g * value,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _apply("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    value = a.data ** exponent
    return _apply("power", value, (a,),
                  lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def maximum(a: ArrayLike, floor: float) -> Tensor:
    """Elementwise max(a, floor) against a constant; ties route no gradient."""
    a = as_tensor(a)
    passed = a.data > floor
    return _apply("maximum", np.where(passed, a.data, floor), (a,), lambda g: (g * passed,))


def relu(a: ArrayLike) -> Tensor:
    return maximum(a, 0.0)


# ============================================================================
# Reductions and normalizers
# ============================================================================

def sum_(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    value = a.data.sum(axis=axis, keepdims=keepdims)
    return _apply("sum", value, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    value = a.data.mean(axis=axis, keepdims=keepdims)
    return _apply("mean", value, (a,),
                  lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


def softmax(a: ArrayLike, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Numerically stable softmax along ``axis``.

    Args:
        a: Logits
        axis: Axis normalized to one
        mask: Optional boolean array (broadcastable to ``a``); True entries
            are excluded, receive probability exactly 0 and no gradient

    Raises:
        ValueError: If every entry of some slice along ``axis`` is masked
    """
    a = as_tensor(a)
    logits = a.data if mask is None else np.where(mask, -np.inf, a.data)
    top = logits.max(axis=axis, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ValueError(f"softmax: a slice along axis {axis} has no unmasked entries")
    weights = np.exp(logits - top)
    value = weights / weights.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (value * (g - (g * value).sum(axis=axis, keepdims=True)),)

    return _apply("softmax", value, (a,), vjp)


def logsumexp(a: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    top = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - top)
    total = shifted.sum(axis=axis, keepdims=True)
    value = top + np.log(total)
    probs = shifted / total
    out_value = value if keepdims else np.squeeze(value, axis=axis)

    def vjp(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * probs,)

    return _apply("logsumexp", out_value, (a,), vjp)


# ============================================================================
# Structural primitives
# ============================================================================

def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _apply("reshape", value, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _apply("transpose", np.transpose(a.data, axes), (a,),
                  lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        value = np.concatenate([t.data for t in parts], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in parts]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    sizes = [t.shape[axis] for t in parts]
    splits = np.cumsum(sizes)[:-1]
    return _apply("concat", value, parts, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    shapes = {t.shape for t in parts}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    value = np.stack([t.data for t in parts], axis=axis)
    return _apply("stack", value, parts,
                  lambda g: tuple(np.take(g, k, axis=axis) for k in range(len(parts))))


def index(a: ArrayLike, key) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)
    value = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _apply("index", np.array(value), (a,), vjp)


def embedding(table: ArrayLike, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; repeated ids accumulate their gradients."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range for table with {table.shape[0]} rows")
    return index(table, ids)


# ============================================================================
# Optimizers
# ============================================================================

class Optimizer:
    """Base class: owns a parameter list and clears gradients after each step."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.params = list(params)
        self.learning_rate = float(learning_rate)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for k, p in enumerate(self.params):
            if p.grad is not None:
                self._update(k, p)
        self.zero_grad()

    def _update(self, k: int, p: Tensor) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class SGD(Optimizer):
    """Plain (optionally momentum) gradient descent."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 0.1, momentum: float = 0.0):
        super().__init__(params, learning_rate)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, k: int, p: Tensor) -> None:
        if self.momentum:
            self.velocity[k] = self.momentum * self.velocity[k] + p.grad
            p.data -= self.learning_rate * self.velocity[k]
        else:
            p.data -= self.learning_rate * p.grad

    def state_dict(self) -> dict:
        return {"velocity": [v.tolist() for v in self.velocity]}

    def load_state_dict(self, state: dict) -> None:
        self.velocity = [np.array(v, dtype=np.float64).reshape(p.shape)
                         for v, p in zip(state["velocity"], self.params)]


class Adam(Optimizer):
    """Adaptive-moment descent (beta1=0.9, beta2=0.999, eps=1e-8 by default)."""

    def __init__(
        self,
        params: Sequence[Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(params, learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        super().step()

    def _update(self, k: int, p: Tensor) -> None:
        self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * p.grad
        self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * p.grad * p.grad
        m_hat = self.m[k] / (1.0 - self.beta1 ** self.t)
        v_hat = self.v[k] / (1.0 - self.beta2 ** self.t)
        p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [m.ravel().tolist() for m in self.m],
            "v": [v.ravel().tolist() for v in self.v],
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.array(m, dtype=np.float64).reshape(p.shape) for m, p in zip(state["m"], self.params)]
        self.v = [np.array(v, dtype=np.float64).reshape(p.shape) for v, p in zip(state["v"], self.params)]


# ============================================================================
# Finite-difference checking
# ============================================================================

def numerical_gradient(fn: Callable[[], float], tensor: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central-difference estimate of d fn / d tensor, perturbing ``tensor.data`` in place."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + step
        upper = fn()
        flat[k] = original - step
        lower = fn()
        flat[k] = original
        grad.reshape(-1)[k] = (upper - lower) / (2.0 * step)
    return grad
