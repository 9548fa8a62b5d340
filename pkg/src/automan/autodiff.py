"""Minimal reverse-mode differentiation over dense float64 arrays.

Every operation is registered under a string kind in :data:`OPS` with a
forward rule and a vector-Jacobian rule. :func:`forward_op` is the single
entry point that builds graph nodes; the helper functions and ``Tensor``
operator overloads are thin wrappers around it.

Example::

    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * Tensor([3.0, 4.0])).sum()
    backward(loss)[w]        # array([3., 4.])
"""
from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import NumericError, ShapeError

_ids = itertools.count()
_local = threading.local()


def _active_tapes() -> list:
    tapes = getattr(_local, "tapes", None)
    if tapes is None:
        tapes = _local.tapes = []
    return tapes


class Tensor:
    """A graph node holding a dense float64 array.

    Leaves are tensors created directly; interior nodes come out of
    :func:`forward_op` and remember their parents and the op that made them.
    """

    __slots__ = ("data", "requires_grad", "parents", "op", "attrs", "ctx", "name", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.op: str | None = None
        self.attrs: dict = {}
        self.ctx = None
        self.name = name
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = self.name or self.op or "leaf"
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return forward_op("add", [self, _wrap(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return forward_op("sub", [self, _wrap(other)])

    def __rsub__(self, other):
        return forward_op("sub", [_wrap(other), self])

    def __mul__(self, other):
        return forward_op("mul", [self, _wrap(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        return forward_op("div", [self, _wrap(other)])

    def __rtruediv__(self, other):
        return forward_op("div", [_wrap(other), self])

    def __neg__(self):
        return forward_op("neg", [self])

    def __matmul__(self, other):
        return forward_op("matmul", [self, _wrap(other)])

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            return forward_op("power", [self, exponent])
        return forward_op("pow_const", [self], exponent=float(exponent))

    def sum(self, axis=None, keepdims=False):
        return forward_op("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return forward_op("mean", [self], axis=axis, keepdims=keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x, name: str | None = None) -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------


class Op:
    __slots__ = ("kind", "check", "forward", "backward")

    def __init__(self, kind, forward, backward, check=None):
        self.kind = kind
        self.forward = forward
        self.backward = backward
        self.check = check


OPS: dict[str, Op] = {}


def register(kind: str, check=None):
    def deco(cls):
        OPS[kind] = Op(kind, cls.forward, cls.backward, check)
        return cls

    return deco


def forward_op(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Apply a registered operation and record the resulting node."""
    try:
        op = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown operation kind {kind!r}") from None
    arrays = [t.data for t in inputs]
    if op.check is not None:
        op.check(kind, arrays, attrs)
    out, ctx = op.forward(arrays, attrs)
    node = Tensor.__new__(Tensor)
    node.data = out
    node.requires_grad = any(t.requires_grad for t in inputs)
    node.name = None
    node._id = next(_ids)
    if node.requires_grad:
        node.parents = tuple(inputs)
        node.op = kind
        node.attrs = attrs
        node.ctx = ctx
        for tape in _active_tapes():
            tape.nodes.append(node)
    else:
        node.parents = ()
        node.op = None
        node.attrs = {}
        node.ctx = None
    return node


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(kind, arrays, attrs):
    try:
        np.broadcast_shapes(*(a.shape for a in arrays))
    except ValueError:
        raise ShapeError(kind, [a.shape for a in arrays]) from None


def _check_axis(kind, arrays, attrs):
    axis = attrs.get("axis", -1)
    nd = arrays[0].ndim
    if axis is not None and not -nd <= axis < nd:
        raise ShapeError(kind, [a.shape for a in arrays], f"axis {axis} out of range")


@register("add", _check_broadcast)
class _Add:
    def forward(xs, attrs):
        return xs[0] + xs[1], None

    def backward(g, node):
        a, b = node.parents
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@register("sub", _check_broadcast)
class _Sub:
    def forward(xs, attrs):
        return xs[0] - xs[1], None

    def backward(g, node):
        a, b = node.parents
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@register("mul", _check_broadcast)
class _Mul:
    def forward(xs, attrs):
        return xs[0] * xs[1], None

    def backward(g, node):
        a, b = node.parents
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb


@register("div", _check_broadcast)
class _Div:
    def forward(xs, attrs):
        return xs[0] / xs[1], None

    def backward(g, node):
        a, b = node.parents
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / b.data**2, b.shape) if b.requires_grad else None
        return ga, gb


@register("neg")
class _Neg:
    def forward(xs, attrs):
        return -xs[0], None

    def backward(g, node):
        return (-g,)


def _check_matmul(kind, arrays, attrs):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(kind, [a.shape, b.shape], "expected (m,k) x (k,n)")


@register("matmul", _check_matmul)
class _Matmul:
    def forward(xs, attrs):
        return xs[0] @ xs[1], None

    def backward(g, node):
        a, b = node.parents
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


@register("sum", _check_axis)
class _Sum:
    def forward(xs, attrs):
        return np.asarray(xs[0].sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))), None

    def backward(g, node):
        x = node.parents[0]
        return (_expand_reduced(g, x.shape, node.attrs.get("axis"), node.attrs.get("keepdims", False)).copy(),)


@register("mean", _check_axis)
class _Mean:
    def forward(xs, attrs):
        return np.asarray(xs[0].mean(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))), None

    def backward(g, node):
        x = node.parents[0]
        axis = node.attrs.get("axis")
        count = x.data.size if axis is None else x.shape[axis]
        return (_expand_reduced(g, x.shape, axis, node.attrs.get("keepdims", False)) / count,)


@register("prod", _check_axis)
class _Prod:
    # Leave-one-out products keep the gradient exact when entries are zero.
    def forward(xs, attrs):
        x = xs[0]
        axis = attrs.get("axis", -1)
        moved = np.moveaxis(x, axis, -1)
        flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
        prod, loo = K.row_prod(flat)
        out = prod.reshape(moved.shape[:-1])
        if attrs.get("keepdims", False):
            out = np.expand_dims(out, axis)
        return out, loo.reshape(moved.shape)

    def backward(g, node):
        x = node.parents[0]
        axis = node.attrs.get("axis", -1)
        if node.attrs.get("keepdims", False):
            g = np.squeeze(g, axis)
        grad = np.moveaxis(node.ctx * g[..., None], -1, axis)
        return (grad,)


@register("softmax", _check_axis)
class _Softmax:
    def forward(xs, attrs):
        axis = attrs.get("axis", -1)
        z = xs[0] - xs[0].max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True), None

    def backward(g, node):
        axis = node.attrs.get("axis", -1)
        p = node.data
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)


@register("log_softmax", _check_axis)
class _LogSoftmax:
    def forward(xs, attrs):
        axis = attrs.get("axis", -1)
        z = xs[0] - xs[0].max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True)), None

    def backward(g, node):
        axis = node.attrs.get("axis", -1)
        p = np.exp(node.data)
        return (g - p * g.sum(axis=axis, keepdims=True),)


@register("exp")
class _Exp:
    def forward(xs, attrs):
        return np.exp(xs[0]), None

    def backward(g, node):
        return (g * node.data,)


@register("log")
class _Log:
    def forward(xs, attrs):
        return np.log(xs[0]), None

    def backward(g, node):
        return (g / node.parents[0].data,)


@register("abs")
class _Abs:
    def forward(xs, attrs):
        return np.abs(xs[0]), None

    def backward(g, node):
        return (g * np.sign(node.parents[0].data),)


@register("sign")
class _Sign:
    # Piecewise constant: zero gradient everywhere it is defined.
    def forward(xs, attrs):
        return np.sign(xs[0]), None

    def backward(g, node):
        return (np.zeros_like(node.parents[0].data),)


@register("pow_const")
class _PowConst:
    def forward(xs, attrs):
        return xs[0] ** attrs["exponent"], None

    def backward(g, node):
        p = node.attrs["exponent"]
        x = node.parents[0].data
        return (g * p * x ** (p - 1),)


@register("power", _check_broadcast)
class _Power:
    # base ** exponent for a strictly positive base and a tensor exponent.
    def forward(xs, attrs):
        return xs[0] ** xs[1], None

    def backward(g, node):
        a, b = node.parents
        out = node.data
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g * b.data * a.data ** (b.data - 1.0), a.shape)
        if b.requires_grad:
            ln = np.log(np.where(a.data > 0, a.data, 1.0))
            gb = _unbroadcast(g * out * ln, b.shape)
        return ga, gb


@register("sigmoid")
class _Sigmoid:
    def forward(xs, attrs):
        x = xs[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, None

    def backward(g, node):
        s = node.data
        return (g * s * (1.0 - s),)


@register("softplus")
class _Softplus:
    def forward(xs, attrs):
        x = xs[0]
        return np.logaddexp(0.0, x), None

    def backward(g, node):
        x = node.parents[0].data
        return (g * OPS["sigmoid"].forward([x], {})[0],)


@register("relu")
class _Relu:
    def forward(xs, attrs):
        return np.maximum(xs[0], 0.0), None

    def backward(g, node):
        return (g * (node.parents[0].data > 0),)


def _check_concat(kind, arrays, attrs):
    axis = attrs.get("axis", -1)
    if not arrays:
        raise ShapeError(kind, [], "nothing to concatenate")
    ref = list(arrays[0].shape)
    for a in arrays:
        s = list(a.shape)
        if len(s) != len(ref):
            raise ShapeError(kind, [x.shape for x in arrays])
        s[axis] = ref[axis]
        if s != ref:
            raise ShapeError(kind, [x.shape for x in arrays])


@register("concat", _check_concat)
class _Concat:
    def forward(xs, attrs):
        axis = attrs.get("axis", -1)
        sizes = [x.shape[axis] for x in xs]
        return np.concatenate(xs, axis=axis), np.cumsum(sizes)[:-1]

    def backward(g, node):
        axis = node.attrs.get("axis", -1)
        return tuple(np.split(g, node.ctx, axis=axis))


def _check_take(kind, arrays, attrs):
    axis = attrs.get("axis", -1)
    idx = np.asarray(attrs["indices"])
    n = arrays[0].shape[axis]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(kind, [arrays[0].shape], f"index out of range for axis of size {n}")


@register("take", _check_take)
class _Take:
    # Indices are constants: gradient scatters back to the picked positions.
    def forward(xs, attrs):
        return np.take(xs[0], attrs["indices"], axis=attrs.get("axis", -1)), None

    def backward(g, node):
        x = node.parents[0]
        axis = node.attrs.get("axis", -1)
        idx = np.asarray(node.attrs["indices"])
        out = np.zeros(x.shape)
        moved_out = np.moveaxis(out, axis, 0)
        moved_g = np.moveaxis(g, axis, 0)
        if idx.ndim == 1 and len(np.unique(idx)) == len(idx):
            moved_out[idx] = moved_g
        else:
            np.add.at(moved_out, idx, moved_g)
        return (out,)


def _check_reshape(kind, arrays, attrs):
    shape = attrs["shape"]
    try:
        np.empty(arrays[0].shape).reshape(shape)
    except ValueError:
        raise ShapeError(kind, [arrays[0].shape, tuple(shape)]) from None


@register("reshape", _check_reshape)
class _Reshape:
    def forward(xs, attrs):
        return xs[0].reshape(attrs["shape"]), None

    def backward(g, node):
        return (g.reshape(node.parents[0].shape),)


def _check_rows(kind, arrays, attrs):
    if arrays[0].ndim != 2:
        raise ShapeError(kind, [arrays[0].shape], "expected a 2-D (rows, window) array")


@register("std_normalize", _check_rows)
class _StdNormalize:
    # Row-wise (w - mean) / (population std + 1e-6); gradient guarded at std = 0.
    def forward(xs, attrs):
        z, std = K.std_norm_fwd(np.ascontiguousarray(xs[0]))
        return z, std

    def backward(g, node):
        w = np.ascontiguousarray(node.parents[0].data)
        return (K.std_norm_bwd(w, node.ctx, np.ascontiguousarray(g)),)


# functional wrappers ------------------------------------------------------


def add(a, b):
    return forward_op("add", [_wrap(a), _wrap(b)])


def mul(a, b):
    return forward_op("mul", [_wrap(a), _wrap(b)])


def matmul(a, b):
    return forward_op("matmul", [a, b])


def reduce_sum(x, axis=None, keepdims=False):
    return forward_op("sum", [x], axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims=False):
    return forward_op("mean", [x], axis=axis, keepdims=keepdims)


def reduce_prod(x, axis=-1, keepdims=False):
    return forward_op("prod", [x], axis=axis, keepdims=keepdims)


def softmax(x, axis=-1):
    return forward_op("softmax", [x], axis=axis)


def log_softmax(x, axis=-1):
    return forward_op("log_softmax", [x], axis=axis)


def exp(x):
    return forward_op("exp", [x])


def log(x):
    return forward_op("log", [x])


def absolute(x):
    return forward_op("abs", [x])


def sign(x):
    return forward_op("sign", [x])


def power(base, exponent):
    return forward_op("power", [_wrap(base), _wrap(exponent)])


def sigmoid(x):
    return forward_op("sigmoid", [x])


def softplus(x):
    return forward_op("softplus", [x])


def relu(x):
    return forward_op("relu", [x])


def concat(xs, axis=-1):
    return forward_op("concat", list(xs), axis=axis)


def take(x, indices, axis=-1):
    return forward_op("take", [x], indices=np.asarray(indices, dtype=np.int64), axis=axis)


def reshape(x, shape):
    return forward_op("reshape", [x], shape=tuple(shape))


def std_normalize(x):
    return forward_op("std_normalize", [x])


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


class GradientTape:
    """Records every differentiable node created inside a ``with`` block.

    Creation order is a topological order, so walking the record in reverse
    visits each node only after all of its consumers.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes().remove(self)
        return False

    def gradient(self, loss: Tensor, sources: Iterable[Tensor] | None = None) -> dict:
        return _backprop(loss, reversed(self.nodes), sources)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Gradients of a scalar ``loss`` w.r.t. every reachable leaf.

    Leaves passed in ``params`` that the loss does not depend on get zeros.
    Calling twice returns identical results; nothing is accumulated on the
    tensors themselves.
    """
    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in seen or not t.requires_grad:
            continue
        seen[t._id] = t
        stack.extend(t.parents)
    order = sorted(seen.values(), key=lambda t: t._id, reverse=True)
    return _backprop(loss, order, params)


def _backprop(loss: Tensor, order, sources) -> dict:
    if loss.data.size != 1:
        raise ShapeError("backward", [loss.shape], "loss must be scalar")
    grads: dict[int, np.ndarray] = {loss._id: np.ones(loss.shape)}
    # leaves go straight into the result: a tape never records them
    result: dict[Tensor, np.ndarray] = {}
    for node in order:
        g = grads.pop(node._id, None)
        if g is None or node.op is None:
            continue
        parent_grads = OPS[node.op].backward(g, node)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            if parent.op is None:
                result[parent] = result[parent] + pg if parent in result else pg
            elif parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
    if loss.op is None and loss.requires_grad:
        result[loss] = np.ones(loss.shape)
    if sources is not None:
        result = {p: result.get(p, np.zeros(p.shape)) for p in sources}
    return result


def finite_difference_check(
    f: Callable[[object], Tensor],
    theta: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``f(theta)`` must return a scalar Tensor; ``theta`` (one leaf or a list
    of leaves) is perturbed in place coordinate by coordinate and restored.
    Relative error per coordinate is |a - n| / (|a| + |n| + 1e-12).
    """
    return float(gradient_check(f, theta, eps)["rel_err"].max(initial=0.0))


def gradient_check(f, theta, eps: float = 1e-5) -> dict:
    """Per-coordinate analytic and numeric gradients, see :func:`finite_difference_check`."""
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    params = [theta] if isinstance(theta, Tensor) else list(theta)
    grads = backward(f(theta), params)
    analytic = np.concatenate([grads[p].ravel() for p in params]) if params else np.zeros(0)
    numeric = np.empty_like(analytic)
    k = 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(theta).data)
            flat[i] = orig - eps
            down = float(f(theta).data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite evaluation at parameter {pi} ({p.name}), coordinate {i}")
            numeric[k] = (up - down) / (2.0 * eps)
            k += 1
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return {"analytic": analytic, "numeric": numeric, "rel_err": rel}
