"""Dense float tensors, a recording tape, and reverse-mode differentiation.

Every operation that touches a recording tape registers a node whose backward
rule is itself written in terms of tape operations.  Running a backward pass
with ``create_graph=True`` therefore records the gradient computation onto the
same tape, which is what makes gradients differentiable a second time (needed
for input-gradient penalties).

Compute precision defaults to float32; wrap verification code in
``precision("float64")`` when checking gradients against finite differences.
A tape is single-owner: never share one between threads.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Rng",
    "ShapeError",
    "tensor",
    "zeros",
    "ones",
    "precision",
    "default_dtype",
    "no_grad",
    "nan_guard",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow",
    "sqrt",
    "exp",
    "log",
    "absolute",
    "clip",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "reduce_sum",
    "mean",
    "reshape",
    "concat",
    "narrow",
    "pad_zeros",
    "conv2d",
    "tconv2d",
    "batchnorm2d",
    "affine_warp",
    "RunningStats",
]


class ShapeError(ValueError):
    """Raised when tensor extents do not line up for an operation."""


# --------------------------------------------------------------------------
# precision and guard switches
# --------------------------------------------------------------------------

_DTYPES = {"float32": np.float32, "float64": np.float64}
_state = {"dtype": np.float32, "grad": True, "nan_guard": False}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(kind: str):
    """Temporarily switch the dtype used for newly created tensors."""
    if kind not in _DTYPES:
        raise ValueError(f"unknown precision {kind!r}")
    prev = _state["dtype"]
    _state["dtype"] = _DTYPES[kind]
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def nan_guard(enabled: bool = True):
    """Check every op result for NaN/Inf inside the block (slow, for tests)."""
    prev = _state["nan_guard"]
    _state["nan_guard"] = enabled
    try:
        yield
    finally:
        _state["nan_guard"] = prev


def _guard(arr: np.ndarray, op: str) -> None:
    if _state["nan_guard"] and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


# --------------------------------------------------------------------------
# deterministic RNG: counter-based splitmix64 + Box-Muller normals
# --------------------------------------------------------------------------

_U64 = np.uint64
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD2B74407B1CE6E93
_MASK64 = (1 << 64) - 1


def _mix64_int(x: int) -> int:
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D4A2C592A9A94D) & _MASK64
    return x ^ (x >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D4A2C592A9A94D)
        return z ^ (z >> _U64(31))


class Rng:
    """Counter-based pseudo-random stream, reproducible across platforms.

    Draw ``i`` of stream ``(seed, stream)`` is ``mix64(key + (i+1)*golden)``,
    a pure function of the counter, so state is just the number of values
    consumed and can be checkpointed exactly.  Normal variates come from the
    Box-Muller transform over consecutive uniform pairs.
    """

    algorithm = "splitmix64"

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.counter = int(counter)
        self._key = _mix64_int(_mix64_int(self.seed) ^ ((self.stream * _STREAM_SALT) & _MASK64))

    def spawn(self, stream: int) -> "Rng":
        """Independent stream derived from the same seed."""
        return Rng(self.seed, stream)

    @property
    def state(self) -> dict:
        return {"algorithm": self.algorithm, "seed": self.seed, "stream": self.stream, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        return cls(state["seed"], state.get("stream", 0), state.get("counter", 0))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(_U64(self._key) + idx * _U64(_GOLDEN))

    def _unit(self, n: int) -> np.ndarray:
        # 53-bit mantissa uniforms in [0, 1)
        return (self._raw(n) >> _U64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform(self, shape: Sequence[int] | int = (), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = low + (high - low) * self._unit(n)
        return u.reshape(shape).astype(default_dtype()) if shape else u.astype(default_dtype())[0]

    def normal(self, shape: Sequence[int] | int = (), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._unit(m)  # (0, 1], keeps log finite
        u2 = self._unit(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = mean + std * z
        return z.reshape(shape).astype(default_dtype()) if shape else z.astype(default_dtype())[0]

    def integers(self, shape: Sequence[int] | int, low: int, high: int) -> np.ndarray:
        """Uniform integers in [low, high). Modulo reduction; fine for small ranges."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        span = _U64(high - low)
        vals = (self._raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self._unit(n), kind="stable")

    def bernoulli(self, shape: Sequence[int] | int, p: float) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        return (self._unit(n) < p).reshape(shape)


# --------------------------------------------------------------------------
# tensor and tape
# --------------------------------------------------------------------------


class Tensor:
    """Immutable n-dimensional value, optionally recorded on a tape.

    ``data`` must not be mutated after the tensor participates in an op;
    the one sanctioned exception is optimizer updates on leaf parameters
    between training steps (after the tape is reset).
    """

    __slots__ = ("data", "requires_grad", "_tape", "_epoch", "_nid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self._tape = None
        self._epoch = -1
        self._nid = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t._tape = None
        t._epoch = -1
        t._nid = -1
        return t

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def spatial(self) -> tuple:
        """(H, W) of an NCHW tensor."""
        if self.ndim != 4:
            raise ShapeError(f"spatial extent undefined for shape {self.shape}")
        return self.data.shape[2], self.data.shape[3]

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise(ShapeError("item() needs a scalar"))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """A view of the same values with no tape history."""
        return Tensor._wrap(self.data)

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    # -- arithmetic sugar ----------------------------------------------------

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, p):
        return pow(self, p)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise(err):
    raise err


class _Node:
    __slots__ = ("out", "inputs", "input_ids", "bwd", "op")

    def __init__(self, out, inputs, input_ids, bwd, op):
        self.out = out
        self.inputs = inputs
        self.input_ids = input_ids
        self.bwd = bwd
        self.op = op


_tape_stack: list["Tape"] = []


def _current_tape():
    return _tape_stack[-1] if _tape_stack else None


class Tape:
    """Creation-ordered record of differentiable operations.

    Node indices are assigned in creation order, which is a valid topological
    order of the (acyclic) graph, so a single reverse sweep computes
    gradients.  Saved forward values live as long as the tape; call
    :meth:`reset` once per training step to release them.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._epoch = 0

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def reset(self) -> None:
        """Drop all nodes and saved activations; leaves re-register on use."""
        self._nodes.clear()
        self._epoch += 1

    def _register(self, t: Tensor) -> int:
        if t._tape is self and t._epoch == self._epoch:
            return t._nid
        nid = len(self._nodes)
        self._nodes.append(_Node(t, (), (), None, "leaf"))
        t._tape = self
        t._epoch = self._epoch
        t._nid = nid
        return nid

    def _add(self, out: Tensor, inputs: tuple, bwd, op: str) -> None:
        ids = tuple(self._register(t) for t in inputs)
        nid = len(self._nodes)
        self._nodes.append(_Node(out, inputs, ids, bwd, op))
        out._tape = self
        out._epoch = self._epoch
        out._nid = nid
        out.requires_grad = True

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None, create_graph: bool = False) -> dict:
        """Gradients of a scalar loss with respect to ``wrt`` tensors.

        Returns a map keyed by the ``wrt`` tensors themselves.  With
        ``create_graph=True`` the returned gradients are recorded on this
        tape and can feed a further loss (second-order differentiation).
        """
        if loss.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        if loss._tape is not self or loss._epoch != self._epoch:
            raise ValueError("loss is not recorded on this tape")

        if wrt is None:
            wrt_list = [n.out for n in self._nodes if n.bwd is None and n.out.requires_grad]
        else:
            wrt_list = list(wrt)
        wrt_ids = [self._register(t) for t in wrt_list]
        keep = set(wrt_ids)

        # ancestors of the loss, following input edges
        anc: set[int] = set()
        stack = [loss._nid]
        while stack:
            nid = stack.pop()
            if nid in anc:
                continue
            anc.add(nid)
            stack.extend(self._nodes[nid].input_ids)

        # nodes from which some wrt tensor is reachable (ascending pass)
        top = loss._nid
        useful = bytearray(top + 1)
        for nid in wrt_ids:
            if nid <= top:
                useful[nid] = 1
        for nid in range(top + 1):
            if useful[nid]:
                continue
            for iid in self._nodes[nid].input_ids:
                if useful[iid]:
                    useful[nid] = 1
                    break

        grads: dict[int, Tensor] = {
            loss._nid: Tensor._wrap(np.ones(loss.shape, dtype=loss.data.dtype))
        }
        # with create_graph the gradient ops must record onto this same tape
        ctx = self if create_graph else no_grad()
        with ctx:
            for nid in range(top, -1, -1):
                if nid not in anc or not useful[nid]:
                    if nid not in keep:
                        grads.pop(nid, None)
                    continue
                g = grads.get(nid)
                if g is None:
                    continue
                node = self._nodes[nid]
                if node.bwd is None:
                    continue
                in_grads = node.bwd(g)
                for t_in, iid, g_in in zip(node.inputs, node.input_ids, in_grads):
                    if g_in is None or not useful[iid]:
                        continue
                    prev = grads.get(iid)
                    grads[iid] = g_in if prev is None else add(prev, g_in)
                if nid not in keep:
                    del grads[nid]

        out: dict[Tensor, Tensor] = {}
        for t, tid in zip(wrt_list, wrt_ids):
            g = grads.get(tid)
            if g is None:
                g = Tensor._wrap(np.zeros(t.shape, dtype=t.data.dtype))
            out[t] = g
        return out


# --------------------------------------------------------------------------
# op plumbing
# --------------------------------------------------------------------------


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple, bwd, op: str) -> Tensor:
    _guard(out.data, op)
    tape = _current_tape()
    if tape is not None and _state["grad"] and any(t.requires_grad for t in inputs):
        tape._add(out, inputs, bwd, op)
    return out


def _sum_to(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back to the source shape (differentiable)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = reduce_sum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(g.shape, shape)) if want == 1 and have != 1)
    if axes:
        g = reduce_sum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


# --------------------------------------------------------------------------
# elementwise ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data + b.data)

    def bwd(g):
        ga = _sum_to(g, a.shape) if a.requires_grad else None
        gb = _sum_to(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data - b.data)

    def bwd(g):
        ga = _sum_to(g, a.shape) if a.requires_grad else None
        gb = _sum_to(neg(g), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data * b.data)

    def bwd(g):
        ga = _sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = _sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data / b.data)

    def bwd(g):
        ga = _sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(-a.data)

    def bwd(g):
        return (neg(g) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "neg")


def pow(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out = Tensor._wrap(a.data**p)

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        return (mul(g, mul(pow(a, p - 1.0), p)),)

    return _record(out, (a,), bwd, "pow")


def sqrt(a) -> Tensor:
    return pow(a, 0.5)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.exp(a.data))

    def bwd(g):
        return (mul(g, out) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.log(a.data))

    def bwd(g):
        return (div(g, a) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "log")


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.abs(a.data))
    sign = Tensor._wrap(np.sign(a.data))

    def bwd(g):
        return (mul(g, sign) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "abs")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where no clamping happened."""
    a = _as_tensor(a)
    out = Tensor._wrap(np.clip(a.data, lo, hi))
    mask = Tensor._wrap(((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype))

    def bwd(g):
        return (mul(g, mask) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "clip")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.maximum(a.data, 0))
    mask = Tensor._wrap((a.data > 0).astype(a.data.dtype))

    def bwd(g):
        return (mul(g, mask) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "relu")


def leaky_relu(a, slope: float = 0.02) -> Tensor:
    a = _as_tensor(a)
    factor = np.where(a.data > 0, a.data.dtype.type(1), a.data.dtype.type(slope))
    out = Tensor._wrap(a.data * factor)
    factor_t = Tensor._wrap(factor)

    def bwd(g):
        return (mul(g, factor_t) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "leaky_relu")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.tanh(a.data))

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        return (mul(g, sub(1.0, mul(out, out))),)

    return _record(out, (a,), bwd, "tanh")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor._wrap(out_data)

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        return (mul(g, mul(out, sub(1.0, out))),)

    return _record(out, (a,), bwd, "sigmoid")


# --------------------------------------------------------------------------
# shape ops and reductions
# --------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = Tensor._wrap(np.sum(a.data, axis=axes, keepdims=keepdims))
    kshape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        return (_expand(reshape(g, kshape), a.shape),)

    return _record(out, (a,), bwd, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for i in axes:
        count *= a.shape[i]
    return mul(reduce_sum(a, axes, keepdims), 1.0 / count)


def _expand(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.ascontiguousarray(np.broadcast_to(a.data, shape)))

    def bwd(g):
        return (_sum_to(g, a.shape) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "expand")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.reshape(shape))

    def bwd(g):
        return (reshape(g, a.shape) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "reshape")


def concat(parts: Sequence, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        return tuple(
            narrow(g, axis, int(offsets[i]), sizes[i]) if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return _record(out, tuple(parts), bwd, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _as_tensor(a)
    axis = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    out = Tensor._wrap(np.ascontiguousarray(a.data[tuple(idx)]))
    after = a.shape[axis] - start - length

    def bwd(g):
        return (pad_zeros(g, axis, start, after) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "narrow")


def pad_zeros(a, axis: int, before: int, after: int) -> Tensor:
    a = _as_tensor(a)
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = Tensor._wrap(np.pad(a.data, widths))

    def bwd(g):
        return (narrow(g, axis, before, a.shape[axis]) if a.requires_grad else None,)

    return _record(out, (a,), bwd, "pad_zeros")


# --------------------------------------------------------------------------
# convolution family
#
# Three mutually-adjoint primitives close under differentiation:
#   conv2d(x, w)            correlation, NCHW by OIKK
#   tconv2d(g, w)           adjoint of conv2d in its first argument
#   _conv2d_wgrad(x, g)     adjoint of conv2d in its weight argument
# Each backward rule is written with the other two, so gradients of
# gradients work to any order.
# --------------------------------------------------------------------------


def _conv_out_hw(h, w, k, s, p):
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, k: int, s: int, oh: int, ow: int) -> np.ndarray:
    b, c, hp, wp = xp.shape
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, k, oh, ow),
        strides=(sb, sc, sh, sw, s * sh, s * sw),
        writeable=False,
    )
    return view.reshape(b, c * k * k, oh * ow)


def _conv2d_fwd(x: np.ndarray, w: np.ndarray, s: int, p: int) -> np.ndarray:
    b, ci, h, wd = x.shape
    o, ci_w, k, _ = w.shape
    oh, ow = _conv_out_hw(h, wd, k, s, p)
    cols = _im2col(_pad_hw(x, p), k, s, oh, ow)
    y = np.matmul(w.reshape(o, -1), cols)
    return y.reshape(b, o, oh, ow)


def _cig_fwd(g: np.ndarray, w: np.ndarray, s: int, p: int, out_hw: tuple) -> np.ndarray:
    # scatter (col2im) of W^T g into the padded input, then crop padding
    b, o, oh, ow = g.shape
    _, ci, k, _ = w.shape
    h, wd = out_hw
    hp, wp = h + 2 * p, wd + 2 * p
    cols = np.matmul(w.reshape(o, -1).T, g.reshape(b, o, oh * ow))
    cols = cols.reshape(b, ci, k, k, oh, ow)
    xp = np.zeros((b, ci, hp, wp), dtype=g.dtype)
    for kh in range(k):
        for kw in range(k):
            xp[:, :, kh : kh + s * oh : s, kw : kw + s * ow : s] += cols[:, :, kh, kw]
    return np.ascontiguousarray(xp[:, :, p : p + h, p : p + wd])


def _cwg_fwd(x: np.ndarray, g: np.ndarray, s: int, p: int, k: int) -> np.ndarray:
    b, ci, h, wd = x.shape
    _, o, oh, ow = g.shape[0], g.shape[1], g.shape[2], g.shape[3]
    xp = _pad_hw(x, p)
    sb, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, ci, k, k, oh, ow),
        strides=(sb, sc, sh, sw, s * sh, s * sw),
        writeable=False,
    )
    # (B,O,OH,OW) x (B,CI,K,K,OH,OW) summed over B,OH,OW
    return np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))


def _check_conv_args(x: Tensor, w: Tensor, stride: int, padding: int, transposed: bool) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-d input and weight, got {x.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be square, got {w.shape[2]}x{w.shape[3]}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    cin = w.shape[1] if not transposed else w.shape[0]
    if x.shape[1] != cin:
        raise ShapeError(
            f"input has {x.shape[1]} channels but weight expects {cin} (weight {w.shape})"
        )
    if not transposed:
        k = w.shape[2]
        if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
            raise ShapeError(
                f"kernel {k} does not fit padded input {x.shape[2]}x{x.shape[3]} (pad {padding})"
            )


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided 2-d correlation of an NCHW input with an OIKK weight."""
    x, w = _as_tensor(x), _as_tensor(w)
    _check_conv_args(x, w, stride, padding, transposed=False)
    out = Tensor._wrap(_conv2d_fwd(x.data, w.data, stride, padding))
    in_hw = (x.shape[2], x.shape[3])
    k = w.shape[2]

    def bwd(g):
        gx = tconv2d(g, w, stride, padding, out_hw=in_hw) if x.requires_grad else None
        gw = _conv2d_wgrad(x, g, stride, padding, k) if w.requires_grad else None
        return gx, gw

    return _record(out, (x, w), bwd, "conv2d")


def tconv2d(x, w, stride: int = 1, padding: int = 0, out_hw: tuple | None = None) -> Tensor:
    """Transposed convolution (the adjoint of :func:`conv2d` in its input).

    Weight layout is (C_in, C_out, K, K).  ``out_hw`` overrides the default
    output extent ``(in-1)*stride - 2*padding + kernel`` when the matching
    forward convolution lost rows to flooring.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _check_conv_args(x, w, stride, padding, transposed=True)
    k = w.shape[2]
    if out_hw is None:
        out_hw = (
            (x.shape[2] - 1) * stride - 2 * padding + k,
            (x.shape[3] - 1) * stride - 2 * padding + k,
        )
        if out_hw[0] < 1 or out_hw[1] < 1:
            raise ShapeError(f"transposed conv output collapsed to {out_hw}")
    out = Tensor._wrap(_cig_fwd(x.data, w.data, stride, padding, out_hw))

    def bwd(g):
        gx = conv2d(g, w, stride, padding) if x.requires_grad else None
        gw = _conv2d_wgrad(g, x, stride, padding, k) if w.requires_grad else None
        return gx, gw

    return _record(out, (x, w), bwd, "tconv2d")


def _conv2d_wgrad(x, g, stride: int, padding: int, k: int) -> Tensor:
    """Adjoint of conv2d in its weight: correlate input with output-gradient."""
    x, g = _as_tensor(x), _as_tensor(g)
    out = Tensor._wrap(_cwg_fwd(x.data, g.data, stride, padding, k))
    in_hw = (x.shape[2], x.shape[3])

    def bwd(u):
        gx = tconv2d(g, u, stride, padding, out_hw=in_hw) if x.requires_grad else None
        gg = conv2d(x, u, stride, padding) if g.requires_grad else None
        return gx, gg

    return _record(out, (x, g), bwd, "conv2d_wgrad")


# --------------------------------------------------------------------------
# batch normalisation (composed from primitives, so any-order gradients work)
# --------------------------------------------------------------------------


class RunningStats:
    """Per-channel running mean/variance buffers for batch norm."""

    def __init__(self, channels: int, dtype=None):
        dtype = dtype or default_dtype()
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def state(self) -> dict:
        return {"mean": self.mean, "var": self.var}


def batchnorm2d(
    x,
    gamma,
    beta,
    running: RunningStats | None = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize per channel over (batch, height, width), then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW, got {x.shape}")
    c = x.shape[1]
    if training:
        if x.shape[0] < 2:
            raise ShapeError("batch norm in training mode needs batch size >= 2")
        mu = mean(x, axis=(0, 2, 3), keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        if running is not None:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.data.reshape(c) * (n / (n - 1))
            running.mean *= 1.0 - momentum
            running.mean += momentum * mu.data.reshape(c).astype(running.mean.dtype)
            running.var *= 1.0 - momentum
            running.var += momentum * unbiased.astype(running.var.dtype)
        inv = pow(add(var, eps), -0.5)
        xhat = mul(centered, inv)
    else:
        if running is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        rm = Tensor._wrap(running.mean.reshape(1, c, 1, 1).astype(x.data.dtype))
        rv = Tensor._wrap(running.var.reshape(1, c, 1, 1).astype(x.data.dtype))
        xhat = mul(sub(x, rm), pow(add(rv, eps), -0.5))
    g = reshape(gamma, (1, c, 1, 1))
    b = reshape(beta, (1, c, 1, 1))
    return add(mul(xhat, g), b)


# --------------------------------------------------------------------------
# affine warp (bilinear resampling; linear in the pixels, so its adjoint is
# a scatter with the same weights)
# --------------------------------------------------------------------------


def _warp_taps(theta: np.ndarray, h: int, w: int):
    """Bilinear tap indices/weights for each output pixel of each image.

    ``theta`` is (B, 2, 3) mapping centered output coords to centered source
    coords.  Returns flat spatial indices (B, N) for the four taps plus their
    weights, with out-of-bounds taps given weight zero.
    """
    b = theta.shape[0]
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    coords = np.stack([xs.ravel() - cx, ys.ravel() - cy, np.ones(h * w)])  # (3, N)
    src = theta.astype(np.float64) @ coords  # (B, 2, N)
    sx = src[:, 0] + cx
    sy = src[:, 1] + cy
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    taps = []
    for dy in (0, 1):
        for dx in (0, 1):
            ix = x0 + dx
            iy = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            wgt = np.where(valid, wgt, 0.0)
            ixc = np.clip(ix, 0, w - 1).astype(np.int64)
            iyc = np.clip(iy, 0, h - 1).astype(np.int64)
            taps.append(((iyc * w + ixc), wgt))
    return taps


def _warp_gather(x: np.ndarray, taps) -> np.ndarray:
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)
    out = np.zeros_like(flat)
    bidx = np.arange(b)[:, None]
    for idx, wgt in taps:
        out += flat[bidx, :, idx].transpose(0, 2, 1) * wgt[:, None, :].astype(x.dtype)
    return out.reshape(b, c, h, w)


def _warp_scatter(g: np.ndarray, taps) -> np.ndarray:
    b, c, h, w = g.shape
    gflat = g.reshape(b, c, h * w)
    acc = np.zeros((b * c * h * w,), dtype=g.dtype)
    base = (np.arange(b) * c)[:, None, None] + np.arange(c)[None, :, None]  # (B,C,1)
    for idx, wgt in taps:
        flat_idx = (base * (h * w) + idx[:, None, :]).ravel()
        vals = (gflat * wgt[:, None, :].astype(g.dtype)).ravel()
        np.add.at(acc, flat_idx, vals)
    return acc.reshape(b, c, h, w)


def affine_warp(x, theta: np.ndarray) -> Tensor:
    """Per-image affine resample with bilinear taps and zero padding.

    ``theta`` (B, 2, 3) maps output pixel coordinates (centered) to source
    coordinates; it is a constant, not a differentiable input.
    """
    x = _as_tensor(x)
    if x.ndim != 4 or theta.shape != (x.shape[0], 2, 3):
        raise ShapeError(f"affine_warp needs NCHW input and (B,2,3) matrices, got {x.shape} / {theta.shape}")
    taps = _warp_taps(theta, x.shape[2], x.shape[3])
    out = Tensor._wrap(_warp_gather(x.data, taps))

    def bwd(g):
        return (_affine_warp_t(g, taps) if x.requires_grad else None,)

    return _record(out, (x,), bwd, "affine_warp")


def _affine_warp_t(g, taps) -> Tensor:
    g = _as_tensor(g)
    out = Tensor._wrap(_warp_scatter(g.data, taps))

    def bwd(u):
        return (_warp_gather_op(u, taps) if g.requires_grad else None,)

    return _record(out, (g,), bwd, "affine_warp_t")


def _warp_gather_op(u, taps) -> Tensor:
    u = _as_tensor(u)
    out = Tensor._wrap(_warp_gather(u.data, taps))

    def bwd(v):
        return (_affine_warp_t(v, taps) if u.requires_grad else None,)

    return _record(out, (u,), bwd, "affine_warp_gather")
