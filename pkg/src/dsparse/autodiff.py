"""Dense arrays with reverse-mode gradients.

Each operation records a node holding its inputs and a backward closure.
``backward`` orders the recorded nodes into a :class:`Tape` (a topological
ordering of the graph reachable from the loss) and replays the closures in
reverse, accumulating into ``.grad``.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float64


def set_precision(precision: str) -> None:
    """Select the default float width for newly created arrays ("float64"|"float32")."""
    global _DTYPE
    if precision not in ("float64", "float32"):
        raise ValueError(f"unknown precision {precision!r}")
    _DTYPE = np.dtype(precision).type


def get_precision() -> str:
    return np.dtype(_DTYPE).name


@contextmanager
def precision(name: str):
    old = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class DimensionError(ValueError):
    pass


class RankError(ValueError):
    pass


class DiffArray:
    """A numpy array that remembers how it was computed."""

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        if isinstance(values, DiffArray):
            values = values.values
        self.values = np.asarray(values, dtype=dtype or _DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[DiffArray, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"DiffArray(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffArray):
            raise TypeError("division by a DiffArray is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> DiffArray:
        return transpose(self)

    def sum(self) -> DiffArray:
        return sum_all(self)

    def mean(self) -> DiffArray:
        return mean_all(self)


def as_array(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _make(values: np.ndarray, parents: Sequence[DiffArray], backward_fn, op: str) -> DiffArray:
    out = DiffArray.__new__(DiffArray)
    out.values = values
    out.grad = None
    out._op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(x: DiffArray, g: np.ndarray) -> None:
    if not x.requires_grad:
        return
    if x.grad is None:
        x.grad = np.array(g, dtype=x.values.dtype, copy=True).reshape(x.shape)
    else:
        x.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Ordered record of the operations that produced a scalar loss.

    ``entries`` is in execution (topological) order; ``replay`` walks it in
    reverse so each node's gradient is complete before it is propagated.
    """

    def __init__(self, entries: list[DiffArray]):
        self.entries = entries

    @classmethod
    def from_output(cls, out: DiffArray) -> Tape:
        order: list[DiffArray] = []
        seen: set[int] = set()
        stack: list[tuple[DiffArray, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self) -> None:
        for node in reversed(self.entries):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss: DiffArray) -> None:
    """Populate ``.grad`` on every requires_grad array that ``loss`` depends on."""
    if loss.size != 1:
        raise RankError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    loss.grad = np.ones_like(loss.values)
    tape.replay()
    # intermediate grads are no longer needed; only leaves keep theirs
    for node in tape.entries:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.values + b.values, (a, b), bw, "add")


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(a.values - b.values, (a, b), bw, "sub")


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _make(a.values * b.values, (a, b), bw, "mul")


_RELU_MARGINS: list[float] | None = None


@contextmanager
def relu_margin():
    """Collect min |preactivation| of every relu evaluated inside the block.

    Yields a list; ``min(list)`` tells a gradient check how close it sits to
    the non-differentiable point.
    """
    global _RELU_MARGINS
    old = _RELU_MARGINS
    _RELU_MARGINS = []
    try:
        yield _RELU_MARGINS
    finally:
        _RELU_MARGINS = old


def relu(x: DiffArray) -> DiffArray:
    if _RELU_MARGINS is not None and x.size:
        _RELU_MARGINS.append(float(np.abs(x.values).min()))
    out_v = np.maximum(x.values, 0)

    def bw(g):
        _accumulate(x, g * (x.values > 0))

    return _make(out_v, (x,), bw, "relu")


def tanh(x: DiffArray) -> DiffArray:
    out_v = np.tanh(x.values)

    def bw(g):
        _accumulate(x, g * (1 - out_v**2))

    return _make(out_v, (x,), bw, "tanh")


def sigmoid(x: DiffArray) -> DiffArray:
    v = x.values
    # split by sign so exp never overflows
    out_v = np.empty_like(v)
    pos = v >= 0
    out_v[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out_v[~pos] = e / (1.0 + e)

    def bw(g):
        _accumulate(x, g * out_v * (1 - out_v))

    return _make(out_v, (x,), bw, "sigmoid")


ACTIVATIONS: dict[str, Callable[[DiffArray], DiffArray]] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


# ---------------------------------------------------------------- shape ops


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    return _make(a.values @ b.values, (a, b), bw, "matmul")


def transpose(x: DiffArray) -> DiffArray:
    def bw(g):
        _accumulate(x, g.T)

    return _make(x.values.T, (x,), bw, "transpose")


def concat(xs: Sequence[DiffArray], axis: int = 1) -> DiffArray:
    xs = [as_array(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(x, g[tuple(idx)])

    return _make(np.concatenate([x.values for x in xs], axis=axis), xs, bw, "concat")


def take_rows(x: DiffArray, idx) -> DiffArray:
    """Gather rows ``x[idx]``; the backward pass scatter-adds repeated rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"row index out of range for {x.shape[0]} rows")

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.values)
            np.add.at(full, idx, g)
            _accumulate(x, full)

    return _make(x.values[idx], (x,), bw, "take_rows")


def column(x: DiffArray, j: int) -> DiffArray:
    """Column ``j`` of a matrix as an m×1 array."""

    def bw(g):
        full = np.zeros_like(x.values)
        full[:, j : j + 1] = g
        _accumulate(x, full)

    return _make(x.values[:, j : j + 1], (x,), bw, "column")


def sum_all(x: DiffArray) -> DiffArray:
    def bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.values.sum()), (x,), bw, "sum")


def mean_all(x: DiffArray) -> DiffArray:
    n = x.size

    def bw(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    return _make(np.asarray(x.values.mean()), (x,), bw, "mean")


# ---------------------------------------------------------------- layers


def softmax_rows(x: DiffArray) -> DiffArray:
    v = x.values
    assert not np.isnan(v).any(), "softmax_rows received NaN"
    e = np.exp(v - v.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        _accumulate(x, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make(s, (x,), bw, "softmax")


class BNState:
    """Learned affine parameters and running statistics for batch norm."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = DiffArray(np.ones(dim), requires_grad=True)
        self.beta = DiffArray(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim, dtype=_DTYPE)
        self.running_var = np.ones(dim, dtype=_DTYPE)
        self.eps = eps
        self.momentum = momentum


def batchnorm(x: DiffArray, state: BNState, mode: str = "train") -> DiffArray:
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise ValueError(f"batchnorm in train mode needs batch size >= 2, got {n}")
        mu = x.values.mean(axis=0)
        var = x.values.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        # running variance tracks the unbiased estimate
        state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.values - mu) * inv
        gamma, beta = state.gamma, state.beta

        def bw(g):
            _accumulate(gamma, (g * xhat).sum(axis=0))
            _accumulate(beta, g.sum(axis=0))
            if x.requires_grad:
                gx = g * gamma.values
                dx = inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
                _accumulate(x, dx)

        return _make(xhat * gamma.values + beta.values, (x, gamma, beta), bw, "batchnorm")
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        shift = DiffArray(-state.running_mean * inv)
        return add(mul(add(mul(x, DiffArray(inv)), shift), state.gamma), state.beta)
    raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def dropout(x: DiffArray, p: float, mode: str = "train", rng: np.random.Generator | None = None) -> DiffArray:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is identity."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(x.shape) >= p).astype(x.values.dtype) / (1 - p)
    return mul(x, DiffArray(keep, dtype=x.values.dtype))


LOG_CLAMP = 1e-12


def bce_1n_loss(scores: DiffArray, labels) -> DiffArray:
    """Binary cross-entropy averaged over entities and then over the batch."""
    y = np.asarray(labels, dtype=scores.values.dtype)
    if y.shape != scores.shape:
        raise DimensionError(f"scores {scores.shape} and labels {y.shape} differ in shape")
    p = scores.values
    pc = np.clip(p, LOG_CLAMP, 1 - LOG_CLAMP)
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean()

    def bw(g):
        inside = (p > LOG_CLAMP) & (p < 1 - LOG_CLAMP)
        d = (-(y / pc) + (1 - y) / (1 - pc)) * inside / y.size
        _accumulate(scores, g * d)

    return _make(np.asarray(loss), (scores,), bw, "bce")


# ---------------------------------------------------------------- checking


def grad_check(fn: Callable[[], DiffArray], params: Iterable[DiffArray], eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``fn()`` against central differences.

    Returns max |analytic - numeric| / max(1, |numeric|) over every entry of
    every parameter.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.values.reshape(-1)
            af = a.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                up = float(fn().values)
                flat[i] = old - eps
                down = float(fn().values)
                flat[i] = old
                num = (up - down) / (2 * eps)
                worst = max(worst, abs(af[i] - num) / max(1.0, abs(num)))
    for p in params:
        p.zero_grad()
    return worst


__all__ = [
    "ACTIVATIONS",
    "BNState",
    "DiffArray",
    "DimensionError",
    "RankError",
    "Tape",
    "add",
    "backward",
    "batchnorm",
    "bce_1n_loss",
    "column",
    "concat",
    "dropout",
    "get_precision",
    "grad_check",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "precision",
    "relu",
    "relu_margin",
    "set_precision",
    "sigmoid",
    "softmax_rows",
    "sub",
    "sum_all",
    "take_rows",
    "tanh",
    "transpose",
]
