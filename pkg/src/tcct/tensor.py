"""Dense numpy-backed tensor with reverse-mode autodiff.

Every activation in the toolkit is a :class:`Tensor` whose last three axes are
(batch..., length, dim). Ops record their parents and a backward closure; a
:class:`GradTape` is the topologically ordered list of those records reachable
from a loss, and :func:`backward` replays it in reverse.

Multiplications executed by ``matmul`` and the convolutions are tallied into the
active :class:`MultiplyCounter` (see :func:`counting`), which is how the
complexity analyzer measures real forward passes.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()
_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_active_counter = contextvars.ContextVar("active_counter", default=None)
_debug = contextvars.ContextVar("debug_finite", default=False)


class DimensionError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class CounterOverflowError(OverflowError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.id = next(_ids)
        self.name = name
        if _debug.get() and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in tensor {name or self.id}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; divide by a constant")
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
    return out


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def debug_finite(enabled: bool = True):
    """Raise :class:`NonFiniteError` whenever a NaN/Inf tensor is created."""
    token = _debug.set(enabled)
    try:
        yield
    finally:
        _debug.reset(token)


# ---------------------------------------------------------------------------
# multiply counting


class MultiplyCounter:
    """Tally of scalar multiplications performed by matmul/conv kernels."""

    LIMIT = 2**62

    def __init__(self):
        self.count = 0
        self.by_op: dict[str, int] = {}

    def add(self, n: int, op: str = "matmul") -> None:
        n = int(n)
        if self.count + n > self.LIMIT:
            raise CounterOverflowError("multiply counter exceeded 2**62")
        self.count += n
        self.by_op[op] = self.by_op.get(op, 0) + n

    def read_and_reset(self) -> int:
        n = self.count
        self.count = 0
        self.by_op = {}
        return n


@contextlib.contextmanager
def counting(counter: MultiplyCounter | None = None):
    counter = counter if counter is not None else MultiplyCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def _tally(n: int, op: str) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add(n, op)


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, "mul", (a, b), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        x._accum(2.0 * x.data * g)

    return _make(x.data * x.data, "square", (x,), backward)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = x.data < 0
    expm1 = np.expm1(np.where(neg, x.data, 0.0))
    out = np.where(neg, alpha * expm1, x.data)

    def backward(g):
        x._accum(g * np.where(neg, alpha * (expm1 + 1.0), 1.0))

    return _make(out, "elu", (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere so finite differences stay clean
    x2 = x.data * x.data
    t = np.tanh(_GELU_C * x.data * (1.0 + 0.044715 * x2))
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    return _make(out, "gelu", (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accum(np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), "sum", (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        x._accum(np.broadcast_to(g / n, x.shape))

    return _make(np.asarray(x.data.mean()), "mean", (x,), backward)


def mean_axis(x: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    n = x.shape[axis]

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        x._accum(np.broadcast_to(gg / n, x.shape))

    return _make(x.data.mean(axis=axis, keepdims=keepdims), "mean_axis", (x,), backward)


def cumsum(x: Tensor, axis: int) -> Tensor:
    def backward(g):
        x._accum(np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _make(np.cumsum(x.data, axis=axis), "cumsum", (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accum(g.reshape(x.shape))

    return _make(x.data.reshape(shape), "reshape", (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        x._accum(np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), "transpose", (x,), backward)


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero tensors")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise DimensionError(f"cannot concat shapes {ref} and {p.shape} along axis {axis}")
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accum(np.take(g, np.arange(lo, hi), axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), "concat", parts, backward)


def concat_dim(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the feature (last) axis; lengths must agree."""
    return concat(parts, axis=-1)


def take(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    ax = axis % x.ndim
    if not 0 <= start <= stop <= x.shape[ax]:
        raise DimensionError(f"slice [{start}, {stop}) out of range for axis of size {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[index] = g
        x._accum(full)

    return _make(x.data[index], "slice", (x,), backward)


def split_dim(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[-1] or any(s < 0 for s in sizes):
        raise DimensionError(f"split sizes {list(sizes)} do not sum to dim {x.shape[-1]}")
    out, lo = [], 0
    for s in sizes:
        out.append(take(x, lo, lo + s, axis=-1))
        lo += s
    return out


def gather(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """``np.take_along_axis`` with gradient (scatter-add back)."""
    index = np.asarray(index)

    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        idx = np.broadcast_to(index, g.shape)
        _scatter_add(full, idx, g, axis)
        x._accum(full)

    return _make(np.take_along_axis(x.data, index, axis=axis), "gather", (x,), backward)


def _scatter_add(target: np.ndarray, index: np.ndarray, values: np.ndarray, axis: int) -> None:
    axis = axis % target.ndim
    grids = np.indices(index.shape, sparse=True)
    full_index = tuple(index if i == axis else grids[i] for i in range(target.ndim))
    np.add.at(target, full_index, values)


def scatter(base: Tensor, index: np.ndarray, values: Tensor, axis: int) -> Tensor:
    """Copy of ``base`` with slots ``index`` along ``axis`` overwritten by ``values``.

    Indices must be unique within each slice.
    """
    index = np.asarray(index)
    out = base.data.copy()
    np.put_along_axis(out, np.broadcast_to(index, values.shape), values.data, axis=axis)

    def backward(g):
        idx = np.broadcast_to(index, values.shape)
        if base.requires_grad:
            gb = g.copy()
            np.put_along_axis(gb, idx, 0.0, axis=axis)
            base._accum(gb)
        if values.requires_grad:
            values._accum(np.take_along_axis(g, idx, axis=axis))

    return _make(out, "scatter", (base, values), backward)


# ---------------------------------------------------------------------------
# kernels


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as err:
        raise DimensionError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from err
    m, k = a.shape[-2:]
    n = b.shape[-1]
    _tally(int(np.prod(batch, dtype=np.int64)) * m * k * n, "matmul")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            b._accum(gb)

    return _make(np.matmul(a.data, b.data), "matmul", (a, b), backward)


def softmax_lastdim(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax with max-subtraction.

    ``mask`` is a boolean array broadcastable to ``x`` marking ALLOWED entries.
    A row with no allowed entry becomes uniform.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=-1, keepdims=True)
    dead = ~np.isfinite(zmax)
    zmax = np.where(dead, 0.0, zmax)
    e = np.exp(z - zmax)
    s = e.sum(axis=-1, keepdims=True)
    y = np.where(dead, 1.0 / z.shape[-1], e / np.where(s == 0, 1.0, s))

    def backward(g):
        gx = y * (g - np.sum(g * y, axis=-1, keepdims=True))
        gx = np.where(dead, 0.0, gx)
        x._accum(gx)

    return _make(y, "softmax", (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def backward(g):
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv / d * (d * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
            x._accum(gx)

    return _make(out, "layer_norm", (x, gamma, beta), backward)


def _tap_stack(x: np.ndarray, k: int, dilation: int, shift: int) -> np.ndarray:
    """(..., L, d) -> (..., L, k, d) with tap j reading x[n - j*dilation + shift]."""
    L = x.shape[-2]
    out = np.zeros(x.shape[:-1] + (k, x.shape[-1]), dtype=DTYPE)
    for j in range(k):
        off = shift - j * dilation
        lo, hi = max(0, -off), min(L, L - off)
        if lo < hi:
            out[..., lo:hi, j, :] = x[..., lo + off : hi + off, :]
    return out


def _tap_unstack(gcols: np.ndarray, dilation: int, shift: int) -> np.ndarray:
    L, k = gcols.shape[-3], gcols.shape[-2]
    gx = np.zeros(gcols.shape[:-3] + (L, gcols.shape[-1]), dtype=DTYPE)
    for j in range(k):
        off = shift - j * dilation
        lo, hi = max(0, -off), min(L, L - off)
        if lo < hi:
            gx[..., lo + off : hi + off, :] += gcols[..., lo:hi, j, :]
    return gx


def conv1d(x: Tensor, weight: Tensor, dilation: int = 1, shift: int = 0, bias: Tensor | None = None) -> Tensor:
    """out[n] = sum_j x[n - j*dilation + shift] @ weight[j]; out-of-range taps read zero.

    ``weight`` has shape (k, d_in, d_out). ``shift=0`` is causal.
    """
    if dilation < 1:
        raise DimensionError("dilation must be >= 1")
    k, d_in, d_out = weight.shape
    if k < 1:
        raise DimensionError("kernel size must be >= 1")
    if x.shape[-1] != d_in:
        raise DimensionError(f"conv input dim {x.shape[-1]} != weight dim {d_in}")
    cols = _tap_stack(x.data, k, dilation, shift)
    flat = cols.reshape(cols.shape[:-2] + (k * d_in,))
    w2 = weight.data.reshape(k * d_in, d_out)
    out = flat @ w2
    _tally(int(np.prod(x.shape[:-1], dtype=np.int64)) * k * d_in * d_out, "conv")

    def backward(g):
        if weight.requires_grad:
            gw = flat.reshape(-1, k * d_in).T @ g.reshape(-1, d_out)
            weight._accum(gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = (g @ w2.T).reshape(cols.shape)
            x._accum(_tap_unstack(gcols, dilation, shift))

    parents = (x, weight)
    result = _make(out, "conv1d", parents, backward)
    return add(result, bias) if bias is not None else result


def causal_dilated_conv1d(x: Tensor, weight: Tensor, dilation: int = 1, bias: Tensor | None = None) -> Tensor:
    return conv1d(x, weight, dilation=dilation, shift=0, bias=bias)


def causal_maxpool1d(x: Tensor, kernel: int = 3, stride: int = 2) -> Tensor:
    """y[m] = max of x[stride*m + stride - 1 - j] for j < kernel, negative indices skipped.

    Output length is exactly floor(L / stride). Ties pick the earliest position.
    """
    L = x.shape[-2]
    if L < stride:
        raise DimensionError(f"sequence length {L} too short to pool with stride {stride}")
    M = L // stride
    anchors = stride * np.arange(M) + stride - 1
    # window columns ordered from earliest to latest time index
    pos = anchors[:, None] - np.arange(kernel - 1, -1, -1)[None, :]
    valid = pos >= 0
    safe = np.where(valid, pos, 0)
    win = x.data[..., safe, :]  # (..., M, kernel, d)
    win = np.where(valid[..., None], win, -np.inf)
    arg = np.argmax(win, axis=-2)  # first occurrence = earliest time
    out = np.take_along_axis(win, arg[..., None, :], axis=-2)[..., 0, :]
    src = safe[np.arange(M)[:, None], arg]

    def backward(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        _scatter_add(gx, src, g, axis=-2)
        x._accum(gx)

    return _make(out, "maxpool", (x,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    return mean_all(square(sub(pred, target)))


# ---------------------------------------------------------------------------
# tape and backward


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[int, ...]
    output: int
    node: Tensor = field(repr=False)


@dataclass
class GradTape:
    entries: list[TapeEntry]
    leaves: dict[int, Tensor]

    def ops(self) -> list[str]:
        return [e.op for e in self.entries]

    def entry_for(self, t: Tensor) -> TapeEntry:
        for e in self.entries:
            if e.output == t.id:
                return e
        raise KeyError(t.id)

    def ancestors(self, t: Tensor) -> set[int]:
        """Ids of every node ``t`` was computed from, including ``t``."""
        seen, stack = set(), [t]
        while stack:
            n = stack.pop()
            if n.id in seen:
                continue
            seen.add(n.id)
            stack.extend(n.parents)
        return seen


def build_tape(root: Tensor) -> GradTape:
    order: list[Tensor] = []
    seen: set[int] = set()
    leaves: dict[int, Tensor] = {}
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        if node._backward is None:
            if node.requires_grad:
                leaves[node.id] = node
            continue
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen:
                stack.append((p, False))
    entries = [TapeEntry(n.op, tuple(p.id for p in n.parents), n.id, n) for n in order]
    return GradTape(entries, leaves)


def backward(loss: Tensor) -> GradTape:
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss is detached from every parameter; no gradient to compute")
    tape = build_tape(loss)
    loss.grad = np.ones(loss.shape, dtype=DTYPE)
    interior = set()
    for entry in reversed(tape.entries):
        node = entry.node
        if node.grad is None:
            continue
        node._backward(node.grad)
        if node is not loss:
            interior.add(node)
    for node in interior:
        node.grad = None
    return tape


# ---------------------------------------------------------------------------
# finite-difference check


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    max_rel_error: float = 0.0
    passed: bool = False

    def __post_init__(self):
        self.max_rel_error = max(self.errors.values(), default=0.0)
        self.passed = self.max_rel_error < self.tolerance


def finite_diff_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-4,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode grads of ``f()`` against central differences.

    The relative error of a parameter is ||analytic - numeric|| / max(||analytic||,
    ||numeric||, 1e-10) over the checked entries. ``max_entries`` samples that
    many coordinates per parameter instead of sweeping all of them.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    backward(f())
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                numeric[n] = (fp - fm) / (2 * eps)
        a = analytic.reshape(-1)[idx]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-10)
        errors[name] = float(np.linalg.norm(a - numeric) / denom)
    for p in params.values():
        p.grad = None
    return GradCheckReport(errors, tol)
