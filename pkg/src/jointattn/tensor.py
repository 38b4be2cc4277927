"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of primitives the joint-attention classifier needs are
provided. Every op is a pure function of its inputs; when a :class:`GradTape`
is active and at least one input requires a gradient, the op is appended to
the tape together with a closure mapping the output gradient to input
gradients.

    >>> p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = sum_(mul(p, p))
    >>> tape.gradient(loss, [p])[0]
    array([2., 4., 6.])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "DomainError",
    "NonFiniteError",
    "Tensor",
    "GradTape",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "log",
    "sum_",
    "mean",
    "reshape",
    "transpose",
    "pad",
    "matmul",
    "conv2d",
    "global_average_pool_per_channel",
    "softmax",
    "global_norm",
]


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class DomainError(ValueError):
    """Operand lies outside the op's mathematical domain."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    """Immutable n-dimensional array of doubles.

    ``data`` is a read-only row-major ``numpy.ndarray``; ``shape`` mirrors it.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, op)
        arr.flags.writeable = False
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.name = None
        return out

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
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, what: str) -> None:
    # any nan/inf makes the sum non-finite; only overflow needs the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.sum(arr)
    if np.isfinite(total):
        return
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{what}: non-finite value produced")


# ---------------------------------------------------------------------------
# tape

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class _Node:
    __slots__ = ("output", "inputs", "backward", "op")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable, op: str = ""):
        self.output = output
        self.inputs = inputs
        self.backward = backward
        self.op = op


class GradTape:
    """Define-by-run record of executed ops.

    Used as a context manager; ops executed inside the block are appended in
    execution order and replayed in reverse by :meth:`gradient`. A tape is
    owned by a single thread.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable, op: str = "") -> None:
        self.nodes.append(_Node(output, inputs, backward, op))

    def outputs(self, op: str) -> list[np.ndarray]:
        """Forward values of every recorded ``op`` node, in execution order."""
        return [node.output.data for node in self.nodes if node.op == op]

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Return d(loss)/d(p) for each ``p`` in ``params``.

        Parameters the loss does not depend on get a zero array.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = []
        for p in params:
            g = grads.get(id(p))
            out.append(np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape))
        return out


def _emit(arr: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor._wrap(arr, op)
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        stack[-1].record(out, inputs, backward, op)
    return out


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if len(a) != len(b):
        raise ShapeError(f"rank mismatch: {a} vs {b}")
    out = []
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"incompatible shapes {a} and {b}")
        out.append(max(x, y))
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (s, gs) in enumerate(zip(shape, g.shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return (
            _unbroadcast(g, sa) if a.requires_grad else None,
            _unbroadcast(g, sb) if b.requires_grad else None,
        )

    return _emit(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return (
            _unbroadcast(g, sa) if a.requires_grad else None,
            _unbroadcast(-g, sb) if b.requires_grad else None,
        )

    return _emit(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    x, y = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * y, x.shape) if a.requires_grad else None,
            _unbroadcast(g * x, y.shape) if b.requires_grad else None,
        )

    return _emit(x * y, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # relu'(0) = 0
    return _emit(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def bias_relu(a: Tensor, bias: Tensor, keep: np.ndarray | None = None) -> Tensor:
    """``relu(a + bias)``, optionally multiplied by a constant 0/1 ``keep`` mask.

    One fused node instead of three; ``bias`` broadcasts like :func:`add`.
    """
    _broadcast_shape(a.shape, bias.shape)
    out = a.data + bias.data
    np.maximum(out, 0.0, out=out)
    if keep is not None:
        _broadcast_shape(out.shape, np.shape(keep))
        out *= keep
    sb = bias.shape

    def backward(g):
        gm = g * (out > 0)
        return (gm if a.requires_grad else None, _unbroadcast(gm, sb) if bias.requires_grad else None)

    return _emit(out, (a, bias), backward, "bias_relu")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; the gradient is zero where clamped."""
    x = a.data
    if floor <= 0.0 and (x <= 0).any():
        raise DomainError("log of non-positive value")
    live = x > floor
    safe = np.where(live, x, floor)
    return _emit(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),), "log")


# ---------------------------------------------------------------------------
# reductions and layout


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(np.reshape(g, kept), shape),)

    return _emit(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    if count == 0:
        raise DomainError(f"mean over zero-extent axes {axes} of shape {a.shape}")
    return scale(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _emit(out, (a,), lambda g: (np.reshape(g, old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def pad(a: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero-pad each axis by ``(before, after)``."""
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    if len(widths) != a.ndim or any(lo < 0 or hi < 0 for lo, hi in widths):
        raise ShapeError(f"pad widths {widths} invalid for shape {a.shape}")
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _emit(np.pad(a.data, widths), (a,), lambda g: (g[crop],), "pad")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Product of an ``m x k`` and a ``k x n`` matrix."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return _emit(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g), "matmul")


def conv2d(
    x: Tensor,
    kernel: Tensor,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2D cross-correlation (no kernel flip).

    ``x`` is ``ch_in x H x W`` or batched ``B x ch_in x H x W``; ``kernel`` is
    ``ch_out x ch_in x f_h x f_w``. Zero padding is applied symmetrically.
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 3/4-d input and 4-d kernel, got {x.shape} and {kernel.shape}")
    xd = x.data if batched else x.data[None]
    b, cin, h, w = xd.shape
    cout, kcin, fh, fw = kernel.shape
    sh, sw = stride
    ph, pw = padding
    if kcin != cin:
        raise ShapeError(f"kernel expects {kcin} input channels, input {x.shape} has {cin}")
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError(f"invalid stride {stride} or padding {padding}")
    hp, wp = h + 2 * ph, w + 2 * pw
    if fh > hp or fw > wp:
        raise ShapeError(f"kernel {kernel.shape} larger than padded input {(cin, hp, wp)}")
    ho = (hp - fh) // sh + 1
    wo = (wp - fw) // sw + 1

    if ph or pw:
        xp = np.zeros((b, cin, hp, wp))
        xp[:, :, ph : ph + h, pw : pw + w] = xd
    else:
        xp = xd
    kd = kernel.data

    def window(arr, i, j):
        # rows i, i+sh, ... and columns j, j+sw, ... seen by kernel tap (i, j);
        # a view whenever the slice spans full rows
        return arr[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]

    taps = [(i, j) for i in range(fh) for j in range(fw)]
    # contiguous per-tap matrices keep matmul on the BLAS path
    ktaps = [np.ascontiguousarray(kd[:, :, i, j]) for i, j in taps]
    cols = [np.reshape(window(xp, i, j), (b, cin, ho * wo)) for i, j in taps]
    out = np.matmul(ktaps[0], cols[0])
    for kt, c in zip(ktaps[1:], cols[1:]):
        out += np.matmul(kt, c)
    out = out.reshape(b, cout, ho, wo)
    if not batched:
        out = out[0]

    def backward(g):
        g2 = np.ascontiguousarray(np.reshape(g, (b, cout, ho * wo)))
        gk = None
        if kernel.requires_grad:
            gk = np.empty(kernel.shape)
            for (i, j), c in zip(taps, cols):
                gk[:, :, i, j] = (g2[0] @ c[0].T) if b == 1 else np.matmul(g2, c.transpose(0, 2, 1)).sum(axis=0)
        dx = None
        if x.requires_grad:
            dxp = np.zeros((b, cin, hp, wp))
            for (i, j), kt in zip(taps, ktaps):
                window(dxp, i, j)[...] += np.matmul(kt.T, g2).reshape(b, cin, ho, wo)
            dx = dxp[:, :, ph : ph + h, pw : pw + w]
            if not batched:
                dx = dx[0]
        return dx, gk

    return _emit(out, (x, kernel), backward, "conv2d")


def global_average_pool_per_channel(x: Tensor, channel_axis: int = -1, keep_axes: Iterable[int] = ()) -> Tensor:
    """Mean over every axis except the channel axis and ``keep_axes``.

    For ``S`` of shape ``T x C x J`` this gives the length-``J`` vector of
    per-joint means; pass ``keep_axes=(0,)`` for a leading batch axis.
    """
    keep = {channel_axis % x.ndim} | {a % x.ndim for a in keep_axes}
    axes = tuple(i for i in range(x.ndim) if i not in keep)
    if any(x.shape[i] == 0 for i in axes):
        raise DomainError(f"zero-extent pooling axis in shape {x.shape}")
    return mean(x, axes)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    if logits.shape[axis] < 1:
        raise DomainError("softmax over empty axis")
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit(p, (logits,), backward, "softmax")


def global_norm(tensors: Sequence[Tensor], squared: bool = False, eps: float = 1e-12) -> Tensor:
    """L2 norm of all entries of ``tensors`` taken together.

    With ``squared=False`` the gradient ``w / ||w||`` is replaced by zero
    when the norm is below ``eps``.
    """
    tensors = tuple(tensors)
    total = float(sum(np.dot(t.data.ravel(), t.data.ravel()) for t in tensors))
    if squared:
        return _emit(np.array(total), tensors, lambda g: tuple(2.0 * g * t.data for t in tensors), "global_norm")
    norm = np.sqrt(total)

    def backward(g):
        if norm < eps:
            return tuple(np.zeros(t.shape) for t in tensors)
        return tuple(g * t.data / norm for t in tensors)

    return _emit(np.array(norm), tensors, backward, "global_norm")
