"""
Dense tensors with reverse-mode automatic differentiation

Every network in the package is composed from the kernels below. An operation
is recorded into the active BackwardGraph only inside a `recording()` context
and only when at least one input requires a gradient, so evaluation runs
without any graph bookkeeping.

Usage:
    with recording():
        loss = cross_entropy(logits(x), targets)
        backward(loss)
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, log_softmax, softmax as _softmax

from errors import GraphError, NumericalError, ShapeError

LAYER_NORM_EPS = 1e-5
WEIGHTED_NORM_EPS = 1e-8

DTYPES = {"float32": np.float32, "float64": np.float64}

ArrayLike = Union["Tensor", np.ndarray, float, int]


def resolve_dtype(name: Union[str, np.dtype, type]) -> np.dtype:
    """Map 'float32'/'float64' (or a numpy dtype) to a numpy dtype"""
    if isinstance(name, str):
        if name not in DTYPES:
            raise ValueError(f"Unsupported precision '{name}' (use float32 or float64)")
        return np.dtype(DTYPES[name])
    return np.dtype(name)


# ============================================================================
# Backward graph
# ============================================================================

@dataclass
class OpRecord:
    kernel: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class BackwardGraph:
    """Ordered list of recorded operations; inputs always precede outputs"""

    def __init__(self):
        self.records: List[OpRecord] = []
        self.consumed = False
        # smallest |x - kink| seen by relu/hardtanh, used to resample gradient checks
        self.min_kink_margin = float("inf")

    def __len__(self) -> int:
        return len(self.records)

    def record(self, kernel: str, inputs: Tuple["Tensor", ...], output: "Tensor", vjp):
        if self.consumed:
            raise GraphError("Cannot record into a consumed backward graph", kernel=kernel)
        output.node_id = len(self.records)
        output.graph = self
        self.records.append(OpRecord(kernel, inputs, output, vjp))

    def note_kinks(self, x: np.ndarray, kinks: Sequence[float]):
        if x.size == 0:
            return
        for kink in kinks:
            self.min_kink_margin = min(self.min_kink_margin, float(np.min(np.abs(x - kink))))


_local = threading.local()


def active_graph() -> Optional[BackwardGraph]:
    return getattr(_local, "graph", None)


@contextmanager
def recording():
    """Open a recording context bound to the current thread"""
    previous = active_graph()
    graph = BackwardGraph()
    _local.graph = graph
    try:
        yield graph
    finally:
        _local.graph = previous


@contextmanager
def no_recording():
    """Temporarily suspend recording (evaluation inside a training loop)"""
    previous = active_graph()
    _local.graph = None
    try:
        yield
    finally:
        _local.graph = previous


# ============================================================================
# Tensor
# ============================================================================

class Tensor:
    """Dense n-dimensional value with an optional gradient buffer"""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node_id: Optional[int] = None
        self.graph: Optional[BackwardGraph] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray) -> "Tensor":
        # intermediates get their grad buffer when backward reaches them
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.node_id = None
        out.graph = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accumulate(self, grad: np.ndarray):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = np.array(grad, copy=True)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operators delegate to the kernels below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value, dtype=dtype)


def _emit(kernel: str, data: np.ndarray, inputs: Tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor._from_op(data)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(kernel, inputs, out, vjp)
    return out


def make_op(kernel: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Register a kernel defined outside this module (forward value + VJP)"""
    return _emit(kernel, data, tuple(inputs), vjp)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype)


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), dtype=dtype)


def uniform_param(rng: np.random.Generator, shape, dtype=np.float32, name: str = None, bound: float = None) -> Tensor:
    """Weights drawn from U(-bound, bound); bound defaults to 1/sqrt(fan_in), fan_in = shape[0]"""
    if bound is None:
        bound = 1.0 / np.sqrt(shape[0])
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype, name=name)


def zeros_param(shape, dtype=np.float32, name: str = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype, name=name)


def ones_param(shape, dtype=np.float32, name: str = None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype, name=name)


# ============================================================================
# Kernels
# ============================================================================

def _broadcast_shape(kernel: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kernel, a.shape, b.shape) from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", a.data + b.data, (a, b), vjp)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("subtract", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("subtract", a.data - b.data, (a, b), vjp)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("multiply", a, b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("multiply", a.data * b.data, (a, b), vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.dtype.type(factor)

    def vjp(g):
        return (g * factor,)

    return _emit("scale", a.data * factor, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes"""
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape)

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _emit("transpose", np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat", reason="no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return np.split(g, splits, axis=ax)

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("stack", reason="no inputs")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, t.shape)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def vjp(g):
        return [np.take(g, i, axis=ax) for i in range(len(tensors))]

    return _emit("stack", out, tensors, vjp)


def slice_(a: Tensor, index) -> Tensor:
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError("slice", a.shape, reason=str(exc)) from None

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _emit("slice", np.ascontiguousarray(out), (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None

    def vjp(g):
        return (g.reshape(a.shape),)

    return _emit("reshape", out, (a,), vjp)


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of `weight` for an integer id array of any shape"""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(
            "embedding", weight.shape, ids.shape,
            reason=f"token id outside [0, {weight.shape[0]})",
        )

    def vjp(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, g)
        return (full,)

    return _emit("embedding", weight.data[ids], (weight,), vjp)


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked-out entries get probability 0"""
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=-1)):
            raise NumericalError("softmax over a row with every element masked", kernel="softmax")
        logits = np.where(mask, logits, -np.inf)
    y = _softmax(logits, axis=-1).astype(x.dtype, copy=False)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _emit("softmax", y, (x,), vjp)


def weighted_normalize(x: Tensor, w: Tensor, eps: float = WEIGHTED_NORM_EPS) -> Tensor:
    """x * w / max(sum(w), eps), the sum running over the last axis"""
    if x.shape != w.shape:
        raise ShapeError("weighted_normalize", x.shape, w.shape)
    raw_total = np.sum(w.data, axis=-1, keepdims=True)
    # eps only floors the denominator; a unit gate sum divides exactly
    floored = raw_total < eps
    total = np.where(floored, x.dtype.type(eps), raw_total)
    out = x.data * w.data / total

    def vjp(g):
        gx = g * w.data / total
        through_sum = np.sum(g * x.data * w.data, axis=-1, keepdims=True) / (total * total)
        gw = g * x.data / total - np.where(floored, 0.0, through_sum)
        return gx, gw

    return _emit("weighted_normalize", out, (x, w), vjp)


def relu(x: Tensor) -> Tensor:
    graph = active_graph()
    if graph is not None and x.requires_grad:
        graph.note_kinks(x.data, (0.0,))
    positive = x.data > 0

    def vjp(g):
        return (g * positive,)

    return _emit("relu", np.where(positive, x.data, 0).astype(x.dtype), (x,), vjp)


def hardtanh(x: Tensor) -> Tensor:
    """max(-1, min(1, x)); slope 1 at the kinks |x| = 1"""
    graph = active_graph()
    if graph is not None and x.requires_grad:
        graph.note_kinks(x.data, (-1.0, 1.0))
    interior = np.abs(x.data) <= 1

    def vjp(g):
        return (g * interior,)

    return _emit("hardtanh", np.clip(x.data, -1, 1), (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def vjp(g):
        return (g * y * (1 - y),)

    return _emit("sigmoid", y, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        return (g * (1 - y * y),)

    return _emit("tanh", y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-feature normalization over the last axis with learned gain and bias"""
    features = x.shape[-1]
    if gain.shape != (features,) or bias.shape != (features,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + x.dtype.type(eps))
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def vjp(g):
        gxhat = g * gain.data
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(x.ndim - 1))
        return gx, np.sum(g * xhat, axis=reduce_axes), np.sum(g, axis=reduce_axes)

    return _emit("layer_norm", out, (x, gain, bias), vjp)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Bernoulli mask scaled by 1/(1-p) in train mode; identity otherwise"""
    if not train or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)

    def vjp(g):
        return (g * mask,)

    return _emit("dropout", x.data * mask, (x,), vjp)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)"""
    targets = np.asarray(targets).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    vocab = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ShapeError("cross_entropy", logits.shape, targets.shape, reason="target id out of range")
    weights = np.ones(targets.shape[0], dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype).reshape(-1)
    count = weights.sum()
    if count <= 0:
        raise NumericalError("cross_entropy over zero unmasked targets", kernel="cross_entropy")
    logp = log_softmax(logits.data, axis=-1)
    rows = np.arange(targets.shape[0])
    loss = -np.sum(logp[rows, targets] * weights) / count

    def vjp(g):
        probs = np.exp(logp)
        probs[rows, targets] -= 1
        return (probs * (weights / count)[:, None] * g,)

    return _emit("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.asarray(out, dtype=x.dtype), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ============================================================================
# Reverse pass
# ============================================================================

def backward(loss: Tensor):
    """Populate .grad of every tensor the scalar `loss` depends on"""
    graph = loss.graph
    if graph is None or loss.node_id is None:
        raise GraphError("backward() needs a loss recorded inside a recording context")
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if graph.consumed:
        raise GraphError("backward graph was already consumed by a previous backward()")

    loss.grad = np.ones_like(loss.data)
    for record in reversed(graph.records[: loss.node_id + 1]):
        upstream = record.output.grad
        if upstream is None:
            continue
        for tensor, grad in zip(record.inputs, record.vjp(upstream)):
            if grad is not None and tensor.requires_grad:
                tensor._accumulate(grad)

    graph.consumed = True
    graph.records.clear()


def numerical_grad(fn: Callable[[], float], tensor: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. `tensor` entries"""
    flat = tensor.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    result = np.zeros(len(positions), dtype=np.float64)
    for k, pos in enumerate(positions):
        original = flat[pos]
        flat[pos] = original + h
        plus = fn()
        flat[pos] = original - h
        minus = fn()
        flat[pos] = original
        result[k] = (plus - minus) / (2 * h)
    return result if indices is not None else result.reshape(tensor.shape)
