"""
Dense tensor arithmetic with reverse-mode differentiation.

Every op builds its output eagerly and, when grad mode is on and any input requires
grad, records its parents and a gradient rule on the output. `backward(loss)` walks the
recorded graph once in reverse topological order (a `GradTape`) and accumulates gradients
into every tensor that requires them.

All values are float64. Implicit broadcasting is limited to identical shapes and
scalar-vs-tensor; row/column tiling is explicit through `expand_rows`/`expand_cols`.
Non-finite results raise `NumericDomainError` at the op that produced them.
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from mixbt.core.exceptions import (
    ContractError,
    DegenerateBatchError,
    DimensionError,
    NumericDomainError,
)

Number = Union[int, float]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread (evaluation, feature extraction)."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericDomainError(op, "produced non-finite values")


def _freeze(data: np.ndarray) -> np.ndarray:
    data.flags.writeable = False
    return data


class Tensor:
    """
    A dense float64 array that can take part in gradient tracking.

    Tensors are immutable after creation; only `grad` changes, by accumulation during
    `backward`.
    """

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64)
        _check_finite("tensor", array)
        self.data = _freeze(array)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_fn: Optional[GradFn] = None
        self._op = "leaf"
        self._tape: Optional["GradTape"] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Sequence["Tensor"], grad_fn: GradFn) -> "Tensor":
        data = np.asarray(data, dtype=np.float64)
        _check_finite(op, data)
        out = cls.__new__(cls)
        out.data = _freeze(data.copy() if not data.flags.owndata else data)
        out.grad = None
        out._tape = None
        out._op = op
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        else:
            out._parents = ()
            out._grad_fn = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def _as_tensor(value: Union[Tensor, Number]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(float(value))


def _binary_operands(op: str, a, b) -> Tuple[Tensor, Tensor]:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(op, f"shapes {a.shape} and {b.shape} are neither identical nor scalar-vs-tensor")
    return a, b


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # scalar operands receive the sum of the broadcast gradient
    return grad if grad.shape == shape else np.asarray(grad.sum())


# --- elementwise ---

def add(a, b) -> Tensor:
    a, b = _binary_operands("add", a, b)
    return Tensor._from_op(a.data + b.data, "add", (a, b),
                           lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands("sub", a, b)
    return Tensor._from_op(a.data - b.data, "sub", (a, b),
                           lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands("mul", a, b)
    return Tensor._from_op(a.data * b.data, "mul", (a, b),
                           lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary_operands("div", a, b)
    if np.any(b.data == 0.0):
        raise NumericDomainError("div", "division by zero")
    return Tensor._from_op(
        a.data / b.data, "div", (a, b),
        lambda g: (_reduce_to(g / b.data, a.shape), _reduce_to(-g * a.data / (b.data * b.data), b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return Tensor._from_op(-x.data, "neg", (x,), lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return Tensor._from_op(x.data * factor, "scale", (x,), lambda g: (g * factor,))


def pow2(x: Tensor) -> Tensor:
    return Tensor._from_op(x.data * x.data, "pow2", (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0.0):
        raise NumericDomainError("sqrt", "square root of a negative value")
    out_data = np.sqrt(x.data)

    def grad_fn(g):
        if np.any((out_data == 0.0) & (g != 0.0)):
            raise NumericDomainError("sqrt", "gradient undefined at zero")
        safe = np.where(out_data == 0.0, 1.0, out_data)
        return (np.where(out_data == 0.0, 0.0, 0.5 * g / safe),)

    return Tensor._from_op(out_data, "sqrt", (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return Tensor._from_op(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)
    return Tensor._from_op(out_data, "exp", (x,), lambda g: (g * out_data,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericDomainError("log", "logarithm of a non-positive value")
    return Tensor._from_op(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    floor = float(floor)
    mask = x.data > floor
    return Tensor._from_op(np.maximum(x.data, floor), "clamp_min", (x,), lambda g: (g * mask,))


# --- reductions and reshaping ---

def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    if axis is not None and not (x.ndim == 2 and axis in (0, 1)):
        raise DimensionError("sum", f"axis={axis} unsupported for shape {x.shape}")
    shape = x.shape

    def grad_fn(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        if axis == 0:
            return (np.repeat(g[None, :], shape[0], axis=0),)
        return (np.repeat(g[:, None], shape[1], axis=1),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis)), "sum", (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul", f"operands must be matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", f"inner extents differ: {a.shape} @ {b.shape}")
    return Tensor._from_op(a.data @ b.data, "matmul", (a, b),
                           lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError("transpose", f"expected a matrix, got shape {x.shape}")
    return Tensor._from_op(x.data.T.copy(), "transpose", (x,), lambda g: (g.T,))


def diagonal(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError("diagonal", f"expected a square matrix, got shape {x.shape}")
    return Tensor._from_op(np.diag(x.data).copy(), "diagonal", (x,), lambda g: (np.diag(g),))


def expand_rows(v: Tensor, rows: int) -> Tensor:
    """Tile a length-d vector into a rows×d matrix."""
    if v.ndim != 1:
        raise DimensionError("expand_rows", f"expected a vector, got shape {v.shape}")
    return Tensor._from_op(np.repeat(v.data[None, :], rows, axis=0), "expand_rows", (v,),
                           lambda g: (g.sum(axis=0),))


def expand_cols(v: Tensor, cols: int) -> Tensor:
    """Tile a length-n vector into an n×cols matrix."""
    if v.ndim != 1:
        raise DimensionError("expand_cols", f"expected a vector, got shape {v.shape}")
    return Tensor._from_op(np.repeat(v.data[:, None], cols, axis=1), "expand_cols", (v,),
                           lambda g: (g.sum(axis=1),))


def logsumexp_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise log-sum-exp over the entries selected by `mask` (max-subtracted)."""
    if x.ndim != 2:
        raise DimensionError("logsumexp_rows", f"expected a matrix, got shape {x.shape}")
    mask = np.ones(x.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError("logsumexp_rows", f"mask shape {mask.shape} differs from {x.shape}")
    if not np.all(mask.any(axis=1)):
        raise ContractError("logsumexp_rows: every row needs at least one selected entry")
    masked = np.where(mask, x.data, -np.inf)
    out_data = logsumexp(masked, axis=1)

    def grad_fn(g):
        weights = np.where(mask, np.exp(masked - out_data[:, None]), 0.0)
        return (weights * g[:, None],)

    return Tensor._from_op(out_data, "logsumexp_rows", (x,), grad_fn)


# --- batch statistics ---

def batch_mean(z: Tensor) -> Tensor:
    """Per-column mean of an N×d batch."""
    if z.ndim != 2:
        raise DimensionError("batch_mean", f"expected an N×d matrix, got shape {z.shape}")
    if z.shape[0] < 2:
        raise DegenerateBatchError(z.shape[0])
    return div(sum(z, axis=0), z.shape[0])


def batch_std(z: Tensor, eps: float) -> Tensor:
    """
    Per-column population standard deviation (divide by N).

    `eps` floors the variance inside the square root, so a constant column has std
    sqrt(eps) while any column with variance above eps is left untouched.
    """
    n = z.shape[0] if z.ndim == 2 else 0
    mu = batch_mean(z)
    centered = sub(z, expand_rows(mu, n))
    variance = div(sum(pow2(centered), axis=0), n)
    return sqrt(clamp_min(variance, eps))


# --- tape ---

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


class GradTape:
    """Topologically ordered record of the ops that produced a scalar loss."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = _topological_order(root)
        self.replayed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> None:
        if self.replayed:
            raise ContractError("backward already ran on this tape; call reset() before replaying")
        for node in self.nodes:
            if node._grad_fn is not None or node.grad is None:
                node.grad = np.zeros(node.shape)
        self.root.grad = self.root.grad + 1.0
        for node in reversed(self.nodes):
            if node._grad_fn is None:
                continue
            for parent, parent_grad in zip(node._parents, node._grad_fn(node.grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.shape:
                    raise DimensionError(node._op, f"gradient shape {parent_grad.shape} != {parent.shape}")
                parent.grad = parent.grad + parent_grad
        self.replayed = True

    def reset(self) -> None:
        for node in self.nodes:
            if node._grad_fn is not None:
                node.grad = None
        self.replayed = False


def backward(loss: Tensor) -> None:
    """Populate `grad` on every tensor that requires grad and contributed to `loss`."""
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    if loss._tape is None:
        loss._tape = GradTape(loss)
    loss._tape.replay()


# --- finite-difference checking ---

@dataclass
class GradcheckReport:
    ok: bool
    max_error: float
    worst_input: int
    worst_index: Tuple[int, ...]


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              rtol: float = 1e-4, atol: float = 1e-7) -> GradcheckReport:
    """
    Compare analytic gradients of scalar `fn(*inputs)` against central differences.

    An entry passes when |analytic - numeric| <= max(atol, rtol * max(|analytic|, |numeric|)).
    `max_error` is the worst ratio of error to allowed error (<= 1 means pass).
    """
    live = [Tensor(t.data, requires_grad=True) for t in inputs]
    backward(fn(*live))
    analytic = [t.grad for t in live]

    worst = (0.0, 0, ())
    with no_grad():
        for i, source in enumerate(inputs):
            base = np.array(source.data)
            for index in np.ndindex(base.shape):
                shifted = []
                for step in (h, -h):
                    bumped = base.copy()
                    bumped[index] += step
                    args = [Tensor(bumped) if j == i else Tensor(t.data) for j, t in enumerate(inputs)]
                    shifted.append(fn(*args).item())
                numeric = (shifted[0] - shifted[1]) / (2.0 * h)
                value = analytic[i][index]
                allowed = max(atol, rtol * max(abs(value), abs(numeric)))
                ratio = abs(value - numeric) / allowed
                if ratio > worst[0]:
                    worst = (ratio, i, index)
    return GradcheckReport(ok=worst[0] <= 1.0, max_error=worst[0], worst_input=worst[1], worst_index=worst[2])
