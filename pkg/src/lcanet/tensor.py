"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous row-major numpy array of float32 or
float64. Every differentiable operation lives in this module: it computes
its result eagerly and, while gradients are enabled, records a tape node
holding the operation tag, the input tensors and a closure that maps the
output adjoint to input adjoints.

The tape is implicit: nodes carry a global creation sequence number, and
``backward`` replays reachable nodes in reverse creation order, which is a
valid topological order because an operation can only consume tensors
created before it. Each node is visited exactly once; leaf tensors marked
``requires_grad`` accumulate into their ``.grad`` buffer.

Tensors are treated as immutable values once produced. Gradients are kept
as plain numpy arrays, never on the tape.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand dimensions do not satisfy an operation's contract."""


class ContractError(ValueError):
    """An operation was called outside its declared contract."""


class NumericsError(ArithmeticError):
    """A non-finite value appeared where the library guarantees finiteness."""


_seq = itertools.count()
_grad_enabled = True
_debug_checks = False


def set_debug_checks(on: bool) -> None:
    """Toggle NaN/Inf assertions on every produced tensor (off by default)."""
    global _debug_checks
    _debug_checks = bool(on)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / numeric probes)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _as_dtype(dtype):
    dt = np.dtype(dtype)
    if dt.type not in DTYPES:
        raise TypeError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


class Node:
    """One tape entry: operation tag, inputs, output and the adjoint rule."""

    __slots__ = ("op", "parents", "grad_fn", "seq", "out")

    def __init__(self, op, parents, grad_fn):
        self.op = op
        self.parents = parents
        self.grad_fn = grad_fn
        self.seq = next(_seq)
        self.out = None  # producing tensor, linked by _record


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype.type not in DTYPES:
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=_as_dtype(dtype))
        # note: not ascontiguousarray, which would promote 0-d scalars to 1-d
        self.data = np.asarray(arr, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node = None

    # -- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Named trainable leaf; ``grad`` accumulates until explicitly zeroed."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


# ---------------------------------------------------------------------------
# tape plumbing
# ---------------------------------------------------------------------------


def _record(op: str, out: np.ndarray, parents, grad_fn) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(out)):
        raise NumericsError(f"{op} produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(out, order="C")
    t.grad = None
    t.node = None
    t.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.node = Node(op, tuple(parents), grad_fn)
        t.node.out = t
    return t


def _check_dtypes(op: str, *tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"{op}: mixed dtypes {dt.name} and {t.dtype.name}")
    return dt


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    ``loss`` must be a scalar produced by a recorded operation. Gradients
    of leaves not reachable from ``loss`` are left untouched.
    """
    if not isinstance(loss, Tensor) or loss.shape != ():
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward expects a scalar tensor, got shape {shape}")
    if loss.node is None:
        raise ContractError("backward on a tensor that no recorded operation produced")

    # Reverse sweep in descending creation order: every consumer of a tensor
    # was created after its producer, so each output adjoint is complete by
    # the time its node is replayed, and every node runs exactly once.
    nodes = []
    seen = set()
    stack = [loss.node]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        for p in node.parents:
            if p.node is not None and id(p.node) not in seen:
                stack.append(p.node)
    nodes.sort(key=lambda n: n.seq, reverse=True)

    adjoint = {id(loss): np.ones((), dtype=loss.dtype)}
    leaves = {}
    for node in nodes:
        g = adjoint.pop(id(node.out), None)
        if g is None:
            continue  # output never fed the loss
        for p, gp in zip(node.parents, node.grad_fn(g)):
            if gp is None or not p.requires_grad:
                continue
            if p.node is None:
                prev = leaves.get(id(p))
                leaves[id(p)] = (p, gp if prev is None else prev[1] + gp)
            else:
                acc = adjoint.get(id(p))
                adjoint[id(p)] = gp if acc is None else acc + gp

    for p, g in leaves.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        p.grad += g.astype(p.dtype, copy=False)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a trailing-axis bias vector as ``b``."""
    _check_dtypes("add", a, b)
    if a.shape == b.shape:
        return _record("add", a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.ndim - 1))
        return _record("add", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not compatible")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("sub", a, b)
    if a.shape == b.shape:
        return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.ndim - 1))
        return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g.sum(axis=axes)))
    raise ShapeError(f"sub: shapes {a.shape} and {b.shape} are not compatible")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record("scale", a.data * np.asarray(s, dtype=a.dtype), (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-D [M,K] by a 2-D [K,N] tensor."""
    _check_dtypes("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record("matmul", out, (a, b), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record("relu", np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-probabilities of a [B,K] logit matrix, max-shifted."""
    if x.ndim != 2:
        raise ShapeError(f"log_softmax expects a 2-D tensor, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _record("log_softmax", out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# spatial operations (NCHW layout)
# ---------------------------------------------------------------------------


def _pool_windows(x: np.ndarray, kh: int, kw: int, stride: int):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _scatter_slices(hout: int, wout: int, i: int, j: int, stride: int):
    return (
        slice(i, i + stride * (hout - 1) + 1, stride),
        slice(j, j + stride * (wout - 1) + 1, stride),
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of [B,Cin,H,W] by [Cout,Cin,kh,kw] plus bias."""
    _check_dtypes("conv2d", x, w, b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {w.shape} must be 4-D")
    bsz, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d: stride {stride} must be >= 1 and pad {pad} >= 0")
    if h + 2 * pad < kh or wdt + 2 * pad < kw:
        raise ShapeError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input "
            f"({h + 2 * pad}x{wdt + 2 * pad})"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _pool_windows(xp, kh, kw, stride)  # B,Cin,H',W',kh,kw
    out = np.einsum("bchwij,ocij->bohw", win, w.data, optimize=True)
    out += b.data[None, :, None, None]
    hout, wout = out.shape[2], out.shape[3]

    def grad_fn(g):
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        gw = np.einsum("bohw,bchwij->ocij", g, win, optimize=True) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    hs, ws = _scatter_slices(hout, wout, i, j, stride)
                    gxp[:, :, hs, ws] += np.einsum("bohw,oc->bchw", g, w.data[:, :, i, j])
            gx = gxp[:, :, pad : pad + h, pad : pad + wdt] if pad else gxp
        return gx, gw, gb

    return _record("conv2d", out, (x, w, b), grad_fn)


def avgpool2d(x: Tensor, kh: int, kw: int, stride: int = 1) -> Tensor:
    """Mean over each kh x kw window, no padding, count includes every cell."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2d expects a 4-D tensor, got shape {x.shape}")
    _, _, h, w = x.shape
    if not (1 <= kh <= h and 1 <= kw <= w):
        raise ShapeError(f"avgpool2d: kernel ({kh}x{kw}) exceeds input extent ({h}x{w})")
    if stride < 1:
        raise ContractError(f"avgpool2d: stride {stride} must be >= 1")
    if kh == 1 and kw == 1 and stride == 1:
        # Identity map, bit-exact by construction.
        return _record("avgpool2d", x.data.copy(), (x,), lambda g: (g,))

    win = _pool_windows(x.data, kh, kw, stride)
    out = win.mean(axis=(-2, -1))
    hout, wout = out.shape[2], out.shape[3]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        share = g / np.asarray(kh * kw, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                hs, ws = _scatter_slices(hout, wout, i, j, stride)
                gx[:, :, hs, ws] += share
        return (gx,)

    return _record("avgpool2d", out, (x,), grad_fn)


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Windowed max; gradient routes to the first argmax in row-major order."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects a 4-D tensor, got shape {x.shape}")
    bsz, c, h, w = x.shape
    if not 1 <= k <= min(h, w):
        raise ShapeError(f"maxpool2d: kernel {k} exceeds input extent ({h}x{w})")
    if stride < 1:
        raise ContractError(f"maxpool2d: stride {stride} must be >= 1")

    win = _pool_windows(x.data, k, k, stride)
    hout, wout = win.shape[2], win.shape[3]
    flat = win.reshape(bsz, c, hout, wout, k * k)
    arg = flat.argmax(axis=-1)  # numpy argmax = first index on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        bi, ci, oi, oj = np.indices((bsz, c, hout, wout), sparse=True)
        hh = oi * stride + arg // k
        ww = oj * stride + arg % k
        np.add.at(gx, (bi, ci, hh, ww), g)
        return (gx,)

    return _record("maxpool2d", out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# shape and reduction operations
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _record(
        "transpose",
        np.transpose(x.data, axes),
        (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty tensor list")
    _check_dtypes("concat", *tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tensors, grad_fn)


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        return _record("sum", x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    axis = int(axis)

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record("sum", x.data.sum(axis=axis), (x,), grad_fn)


def tensor_mean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = x.size
        return _record(
            "mean",
            x.data.mean(),
            (x,),
            lambda g: ((np.broadcast_to(g, x.shape) / np.asarray(n, dtype=x.dtype)).astype(x.dtype),),
        )
    axis = int(axis)
    n = x.shape[axis]

    def grad_fn(g):
        expanded = np.expand_dims(g, axis) / np.asarray(n, dtype=x.dtype)
        return (np.broadcast_to(expanded, x.shape).astype(x.dtype),)

    return _record("mean", x.data.mean(axis=axis), (x,), grad_fn)
