"""Dense 2-D tensors with reverse-mode automatic differentiation.

Everything is a row-major float64 matrix.  Ops build a define-by-run graph
(the tape) by linking each result tensor to its inputs together with a
closure that pushes adjoints backwards.  The graph is rebuilt on every
forward pass, so variable set sizes cost nothing extra.

Only rank-2 tensors exist; batching is done by looping over sets.  There is
no implicit broadcasting beyond the explicit ``broadcast_row``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation's contract is violated (e.g. non-scalar loss)."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / benchmarking)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A rows x cols float64 matrix, optionally part of the autodiff graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are rank-2, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        if _GRAD_ENABLED:
            self._parents = parents
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """A named trainable leaf tensor. Gradients accumulate across backward calls."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data)
        self._parents = ()
        self._backward = None
        self.name = name
        self.trainable = trainable

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def backward(loss: Tensor) -> None:
    """Reverse accumulation from a 1x1 loss tensor.

    Gradients of leaves reached from ``loss`` are accumulated into ``.grad``;
    leaves not participating keep whatever gradient they already had (zero /
    None if freshly cleared).
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
    # Iterative topological sort (post-order DFS).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss._accum(np.ones((1, 1)))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    # Interior grads are not needed once the pass is done.
    for node in topo:
        if not isinstance(node, Parameter) and node._parents:
            node.grad = None


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    out_data = a.data @ b.data

    def bwd(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return Tensor(out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bwd(g):
        a._accum(g)
        b._accum(g)

    return Tensor(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bwd(g):
        a._accum(g)
        b._accum(-g)

    return Tensor(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_same_shape(a, b, "mul")

    def bwd(g):
        a._accum(g * b.data)
        b._accum(g * a.data)

    return Tensor(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    out_data = a.data / b.data

    def bwd(g):
        a._accum(g / b.data)
        b._accum(-g * out_data / b.data)

    return Tensor(out_data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def bwd(g):
        a._accum(g * c)

    return Tensor(a.data * c, (a,), bwd)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        a._accum(g)

    return Tensor(a.data + float(c), (a,), bwd)


def mul_scalar_t(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by a trainable 1x1 scalar tensor."""
    if s.shape != (1, 1):
        raise ShapeError(f"mul_scalar_t: scalar operand has shape {s.shape}")
    sv = s.data[0, 0]

    def bwd(g):
        a._accum(g * sv)
        s._accum(np.array([[np.sum(g * a.data)]]))

    return Tensor(a.data * sv, (a, s), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a._accum(-g)

    return Tensor(-a.data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bwd(g):
        a._accum(g * mask)

    return Tensor(a.data * mask, (a,), bwd)


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bwd(g):
        a._accum(g * sign)

    return Tensor(np.abs(a.data), (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        a._accum(g * out_data)

    return Tensor(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        a._accum(g / a.data)

    return Tensor(np.log(a.data), (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, a.data)

    def bwd(g):
        a._accum(g * _sigmoid(a.data))

    return Tensor(out_data, (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    def bwd(g):
        a._accum(g.T)

    return Tensor(a.data.T.copy(), (a,), bwd)


def broadcast_row(a: Tensor, n: int) -> Tensor:
    """Tile a 1 x d row into an n x d matrix."""
    if a.shape[0] != 1:
        raise ShapeError(f"broadcast_row: expected a single row, got {a.shape}")

    def bwd(g):
        a._accum(g.sum(axis=0, keepdims=True))

    return Tensor(np.repeat(a.data, n, axis=0), (a,), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ ({p.shape} vs {parts[0].shape})")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p._accum(g[:, lo:hi])

    return Tensor(np.hstack([p.data for p in parts]), tuple(parts), bwd)


def split_cols(a: Tensor, widths: Iterable[int]) -> list[Tensor]:
    widths = list(widths)
    if sum(widths) != a.shape[1]:
        raise ShapeError(
            f"split_cols: widths {widths} do not sum to {a.shape[1]} columns")
    out = []
    lo = 0
    for w in widths:
        lo_, hi_ = lo, lo + w

        def make_bwd(lo=lo_, hi=hi_):
            def bwd(g):
                full = np.zeros_like(a.data)
                full[:, lo:hi] = g
                a._accum(full)
            return bwd

        out.append(Tensor(a.data[:, lo_:hi_].copy(), (a,), make_bwd()))
        lo += w
    return out


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as ({rows}, {cols})")

    def bwd(g):
        a._accum(g.reshape(a.shape))

    return Tensor(a.data.reshape(rows, cols).copy(), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        a._accum(np.full(a.shape, g[0, 0]))

    return Tensor(np.array([[a.data.sum()]]), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size

    def bwd(g):
        a._accum(np.full(a.shape, g[0, 0] * inv))

    return Tensor(np.array([[a.data.mean()]]), (a,), bwd)


def sum_cols(a: Tensor) -> Tensor:
    """Sum over columns: n x m -> n x 1."""

    def bwd(g):
        a._accum(np.repeat(g, a.shape[1], axis=1))

    return Tensor(a.data.sum(axis=1, keepdims=True), (a,), bwd)


def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows: n x m -> 1 x m."""

    def bwd(g):
        a._accum(np.repeat(g, a.shape[0], axis=0))

    return Tensor(a.data.sum(axis=0, keepdims=True), (a,), bwd)


def mean_rows(a: Tensor) -> Tensor:
    return scale(sum_rows(a), 1.0 / a.shape[0])


def max_rows(a: Tensor) -> Tensor:
    """Columnwise maximum over rows: n x m -> 1 x m. Ties go to the first row."""
    idx = np.argmax(a.data, axis=0)
    cols = np.arange(a.shape[1])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx, cols] = g[0]
        a._accum(full)

    return Tensor(a.data[idx, cols].reshape(1, -1), (a,), bwd)


# ---------------------------------------------------------------------------
# Row-normalizing ops
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor, sm_scale: float = 1.0) -> Tensor:
    """Rowwise softmax of x / sm_scale, with max-subtraction for stability."""
    if sm_scale <= 0:
        raise ContractError(f"softmax scale must be positive, got {sm_scale}")
    z = x.data / sm_scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        x._accum(y * (g - inner) / sm_scale)

    return Tensor(y, (x,), bwd)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Rowwise log-sum-exp: n x m -> n x 1."""
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    out_data = m + np.log(s)

    def bwd(g):
        x._accum(g * (e / s))

    return Tensor(out_data, (x,), bwd)


def layernorm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each row over its features, then apply 1 x d gain and bias."""
    d = x.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError(
            f"layernorm_rows: gain {gain.shape} / bias {bias.shape} must be (1, {d})")
    if eps <= 0:
        raise ContractError(f"layernorm eps must be positive, got {eps}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bwd(g):
        gain._accum((g * xhat).sum(axis=0, keepdims=True))
        bias._accum(g.sum(axis=0, keepdims=True))
        dxhat = g * gain.data
        x._accum((dxhat
                  - dxhat.mean(axis=1, keepdims=True)
                  - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) * inv)

    return Tensor(xhat * gain.data + bias.data, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def finite_diff_check(forward: Callable[[], Tensor],
                      params: Sequence[Parameter],
                      h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``forward`` must be a deterministic closure returning a 1x1 loss built
    from the given parameters.  The numeric side never touches the tape: each
    probe runs under ``no_grad``.  Relative error uses a unit floor so that
    near-zero gradient pairs do not blow up the ratio.
    """
    if h <= 0:
        raise ContractError(f"finite_diff_check: h must be positive, got {h}")
    for p in params:
        p.zero_grad()
    loss = forward()
    backward(loss)
    tape_grads = [np.zeros(p.shape) if p.grad is None else p.grad.copy()
                  for p in params]

    worst = 0.0
    with no_grad():
        for p, tg in zip(params, tape_grads):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = forward().item()
                flat[i] = orig - h
                f_minus = forward().item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                ad = tg.reshape(-1)[i]
                err = abs(fd - ad) / max(abs(fd), abs(ad), 1.0)
                worst = max(worst, err)
    return worst


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()
