"""Dense arrays with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array and records the operation that produced
it. Calling :func:`backprop` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients into every :class:`Parameter`.
"""

from __future__ import annotations

import contextlib
import contextvars
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)

FLOAT64 = np.float64
FLOAT32 = np.float32


class NumericsError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


def _check_finite(data: np.ndarray, op: str) -> None:
    if data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NumericsError(f"non-finite value produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An array node in a computation graph."""

    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(FLOAT64)
        _check_finite(arr, _op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def __len__(self) -> int:
        return len(self.data)

    # graph plumbing ---------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        _check_finite(data, op)
        out.data = data
        out.grad = None
        out._op = op
        track = _GRAD_ENABLED.get() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # arithmetic -------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor._make(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(a.data / b.data, (a, b), backward, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) / self

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g):
            a._accumulate(-g)

        return Tensor._make(-a.data, (a,), backward, "neg")

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        p = float(exponent)

        def backward(g):
            a._accumulate(g * p * a.data ** (p - 1))

        return Tensor._make(a.data**p, (a,), backward, "pow")

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                if b.ndim == 1:
                    ga = np.multiply.outer(g, b.data)
                else:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if b.ndim == 2 and a.ndim >= 2:
                    a2 = a.data.reshape(-1, a.shape[-1])
                    gb = a2.T @ g.reshape(-1, g.shape[-1])
                elif a.ndim == 1:
                    gb = np.multiply.outer(a.data, g)
                elif b.ndim == 1:
                    gb = (np.swapaxes(a.data, -1, -2) @ g[..., None])[..., 0]
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")

    # elementwise ------------------------------------------------------
    def exp(self) -> "Tensor":
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            a._accumulate(g * out_data)

        return Tensor._make(out_data, (a,), backward, "exp")

    def log(self) -> "Tensor":
        a = self

        def backward(g):
            a._accumulate(g / a.data)

        return Tensor._make(np.log(a.data), (a,), backward, "log")

    def tanh(self) -> "Tensor":
        a = self
        out_data = np.tanh(a.data)

        def backward(g):
            a._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._make(out_data, (a,), backward, "tanh")

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0

        def backward(g):
            a._accumulate(g * mask)

        return Tensor._make(a.data * mask, (a,), backward, "relu")

    def gelu(self) -> "Tensor":
        """Tanh-approximated GELU."""
        a = self
        x = a.data
        c = 0.7978845608028654  # sqrt(2 / pi)
        x2 = x * x
        t = np.tanh(c * x * (1.0 + 0.044715 * x2))
        out_data = 0.5 * x * (1.0 + t)

        def backward(g):
            dinner = c * (1.0 + 0.134145 * x2)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a._accumulate(g * d)

        return Tensor._make(out_data, (a,), backward, "gelu")

    def sigmoid(self) -> "Tensor":
        a = self
        out_data = 1.0 / (1.0 + np.exp(-a.data))

        def backward(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (a,), backward, "sigmoid")

    def clamp_min(self, floor: float) -> "Tensor":
        a = self
        mask = a.data > floor

        def backward(g):
            a._accumulate(g * mask)

        return Tensor._make(np.maximum(a.data, floor), (a,), backward, "clamp_min")

    # reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor._make(
            np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum"
        )

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[i] for i in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # shape ------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def backward(g):
            a._accumulate(g.reshape(a.shape))

        return Tensor._make(a.data.reshape(shape), (a,), backward, "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)

        def backward(g):
            a._accumulate(np.transpose(g, inv))

        return Tensor._make(np.transpose(a.data, axes), (a,), backward, "transpose")

    def swapaxes(self, i: int, j: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(tuple(axes))

    def __getitem__(self, index) -> "Tensor":
        a = self
        if isinstance(index, Tensor):
            index = index.data.astype(np.int64)

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a._accumulate(full)

        return Tensor._make(np.asarray(a.data[index]), (a,), backward, "getitem")

    # softmax family ---------------------------------------------------
    def softmax(self, axis: int = -1) -> "Tensor":
        a = self
        z = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            a._accumulate(p * (g - (g * p).sum(axis=axis, keepdims=True)))

        return Tensor._make(p, (a,), backward, "softmax")

    def log_softmax(self, axis: int = -1) -> "Tensor":
        a = self
        z = a.data - a.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
        out_data = z - lse
        p = np.exp(out_data)

        def backward(g):
            a._accumulate(g - p * g.sum(axis=axis, keepdims=True))

        return Tensor._make(out_data, (a,), backward, "log_softmax")

    T = property(lambda self: self.swapaxes(-1, -2))


class Parameter(Tensor):
    """A named, trainable leaf tensor whose gradient is always allocated."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, _op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad += g

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tensors, backward, "stack")


def scatter_rows(x: Tensor, index: np.ndarray, n: int) -> Tensor:
    """Place rows of ``x`` at ``index`` in a zero tensor with ``n`` rows.

    Duplicate indices add. This is the adjoint of ``x[index]``.
    """
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, index, x.data)

    def backward(g):
        x._accumulate(g[index])

    return Tensor._make(out, (x,), backward, "scatter_rows")


def where(mask: np.ndarray, a: Tensor, b) -> Tensor:
    """Elementwise select with a constant boolean mask."""
    b = as_tensor(b, a.dtype)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), backward, "where")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Fused layer normalization over the last axis."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            gx = inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
            x._accumulate(gx)

    return Tensor._make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "layer_norm")


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backprop(loss: Tensor, parameters: Iterable[Parameter] = (), warn_disconnected: bool = True) -> None:
    """Accumulate d(loss)/d(param) into ``param.grad`` for every reachable parameter.

    Parameters in ``parameters`` that the loss does not depend on keep a zero
    gradient contribution; a warning names them unless ``warn_disconnected``
    is false (sparse expert layers disconnect experts by design).
    """
    if loss.size != 1:
        raise ValueError(f"backprop needs a scalar loss, got shape {loss.shape}")
    parameters = list(parameters)
    if not loss.requires_grad:
        if warn_disconnected and parameters:
            warnings.warn("loss does not depend on any parameter; gradients left at zero", stacklevel=2)
        return
    order = _topo_order(loss)
    reachable = {id(t) for t in order}
    missing = [p.name or repr(p) for p in parameters if id(p) not in reachable]
    if missing and warn_disconnected:
        warnings.warn(f"parameters disconnected from loss: {missing}", stacklevel=2)
    # intermediate grads are transient; parameters accumulate
    for node in order:
        if not isinstance(node, Parameter):
            node.grad = None
    loss.grad = np.ones_like(loss.data) if not isinstance(loss, Parameter) else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if not isinstance(node, Parameter):
                node.grad = None
