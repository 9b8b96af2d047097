"""Dense tensors with reverse-mode automatic differentiation.

Values are row-major numpy arrays in a single session-wide precision
(float64 for tests and gradient checks, float32 for faster training).
Operations executed inside an active ``Tape`` record a backward closure;
``backward`` on a scalar loss replays the tape once, in reverse record
order, accumulating gradients into every reachable tensor that has
``requires_grad`` set.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "Tape",
    "set_default_dtype",
    "get_default_dtype",
    "tensor",
    "zeros",
    "ones",
    "full",
    "concat",
    "matmul",
    "save_tensor",
    "load_tensor",
    "no_tape",
]

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Select the session precision (numpy float32 or float64)."""
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dt.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class TensorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Wengert list of recorded operations.

    Single-owner and confined to one thread. ``backward`` consumes the
    tape: entries are cleared after the reverse sweep and a second call
    raises.
    """

    def __init__(self):
        self._entries = []  # (out, inputs, backward_fn)
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        top = _TAPE_STACK.pop()
        assert top is self
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out: "Tensor", inputs, backward_fn) -> None:
        """Append one operation; ``backward_fn(grad_out) -> per-input grads``."""
        if self._consumed:
            raise TensorError("tape already consumed by backward()")
        self._entries.append((out, tuple(inputs), backward_fn))
        out._tape = self

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise TensorError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad or loss._tape is not self:
            raise TensorError("loss is detached from the active tape")
        if self._consumed:
            raise TensorError("tape already consumed by backward()")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._entries):
            gout = out.grad
            if gout is None:
                continue
            grads = backward_fn(gout)
            for t, g in zip(inputs, grads):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
        self._entries.clear()
        self._consumed = True


class _NoTape:
    """Context that disables recording (inference mode)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


def no_tape():
    return _NoTape()


_TAPE_STACK: list = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out: "Tensor", inputs, backward_fn) -> "Tensor":
    """Register an op on the active tape when the output requires grad."""
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# Tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None

    # -- introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        tape = _active_tape()
        if tape is None:
            raise TensorError("no active tape; run the computation inside `with Tape():`")
        tape.backward(self)

    # -- arithmetic sugar ----------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    # -- method aliases -------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False, dtype=dtype)


def _check_same_dtype(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise TensorError(
            f"{opname}: mixed dtypes {a.data.dtype} and {b.data.dtype} in one graph"
        )


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorError(
            f"{opname}: shapes {list(a.shape)} and {list(b.shape)} are not "
            "broadcastable under the trailing-dimension rule"
        ) from None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _out(data, *inputs) -> Tensor:
    req = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = req
    t._tape = None
    return t


def op_output(data, *inputs) -> Tensor:
    """Wrap raw results of a fused op; pair with ``record_op`` for backward."""
    return _out(data, *inputs)


# ---------------------------------------------------------------------------
# creation


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def full(shape, value, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "add")
    _check_broadcast(a, b, "add")
    out = _out(a.data + b.data, a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "sub")
    _check_broadcast(a, b, "sub")
    out = _out(a.data - b.data, a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "mul")
    _check_broadcast(a, b, "mul")
    out = _out(a.data * b.data, a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    _check_same_dtype(a, b, "div")
    _check_broadcast(a, b, "div")
    out = _out(a.data / b.data, a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    out = _out(-a.data, a)
    return record_op(out, (a,), lambda g: (-g,))


def power(a: Tensor, p) -> Tensor:
    p = float(p)
    out = _out(a.data**p, a)

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return record_op(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = _out(y, a)
    return record_op(out, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    out = _out(np.log(a.data), a)
    return record_op(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = _out(y, a)
    return record_op(out, (a,), lambda g: (g * (0.5 / y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _out(y, a)
    return record_op(out, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = _out(y, a)
    return record_op(out, (a,), lambda g: (g * y * (1.0 - y),))


def erf(a: Tensor) -> Tensor:
    y = _erf(a.data)
    out = _out(y, a)
    c = 2.0 / np.sqrt(np.pi)

    def backward(g):
        return (g * c * np.exp(-a.data * a.data),)

    return record_op(out, (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient is 1 inside [lo, hi] and 0 outside."""
    y = np.clip(a.data, lo, hi)
    out = _out(y, a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
    return record_op(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _out(np.add.reduce(a.data, axis=axis, keepdims=keepdims), a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record_op(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TensorError("matmul expects two tensors")
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise TensorError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise TensorError(
            f"matmul: inner dimensions differ, {list(a.shape)} @ {list(b.shape)}"
        )
    out = _out(np.matmul(a.data, b.data), a, b)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op(out, (a, b), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _out(a.data.reshape(shape), a)
    return record_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = _out(np.transpose(a.data, axes), a)
    return record_op(out, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TensorError(f"concat: mixed dtypes {sorted(map(str, dtypes))}")
    out = _out(np.concatenate([t.data for t in tensors], axis=axis), *tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op(out, tuple(tensors), backward)


def slice_(a: Tensor, key) -> Tensor:
    out = _out(a.data[key].copy(), a)

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return record_op(out, (a,), backward)


def pad(a: Tensor, pad_width) -> Tensor:
    """Constant zero padding; ``pad_width`` follows numpy's convention."""
    pw = tuple((int(l), int(r)) for l, r in pad_width)
    out = _out(np.pad(a.data, pw), a)
    key = tuple(slice(l, l + n) for (l, _), n in zip(pw, a.shape))
    return record_op(out, (a,), lambda g: (g[key],))


def flip(a: Tensor, axis) -> Tensor:
    out = _out(np.flip(a.data, axis=axis).copy(), a)
    return record_op(out, (a,), lambda g: (np.flip(g, axis=axis).copy(),))


def dilate(a: Tensor, axis: int, step: int) -> Tensor:
    """Insert ``step - 1`` zeros between entries along ``axis``."""
    if step == 1:
        return a
    shape = list(a.shape)
    n = shape[axis]
    shape[axis] = (n - 1) * step + 1 if n > 0 else 0
    data = np.zeros(shape, dtype=a.data.dtype)
    key = [slice(None)] * a.ndim
    key[axis] = slice(0, None, step)
    key = tuple(key)
    data[key] = a.data
    out = _out(data, a)
    return record_op(out, (a,), lambda g: (g[key].copy(),))


# ---------------------------------------------------------------------------
# dump format for golden tests: "TNSR", u32 rank, u32 dims[], f64 row-major LE


def save_tensor(path, t) -> None:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(b"TNSR")
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f8").tobytes(order="C"))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != b"TNSR":
            raise TensorError(f"bad tensor file magic {magic!r}")
        (rank,) = struct.unpack("<I", f.read(4))
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
        data = np.frombuffer(f.read(), dtype="<f8").reshape(dims)
    return Tensor(np.ascontiguousarray(data), dtype=np.float64)
