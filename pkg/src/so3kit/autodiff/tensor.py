"""Reverse-mode automatic differentiation over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. :func:`backward` walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError

_recording = [True]


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a backward graph."""
    _recording.append(False)
    try:
        yield
    finally:
        _recording.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: scale(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, index: getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named leaf tensor updated by optimizers."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name="", trainable=True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if _recording[-1] and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope=0.01) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clamp_min(a, low: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data >= low
    return _make(np.where(mask, a.data, low), (a,), lambda g: (g * mask,), "clamp_min")


def sign_clamp(a, eps: float) -> Tensor:
    """Push magnitudes below ``eps`` out to ``eps`` keeping the sign (0 stays 0)."""
    a = as_tensor(a)
    keep = np.abs(a.data) >= eps
    out = np.where(keep, a.data, np.sign(a.data) * eps)
    return _make(out, (a,), lambda g: (g * keep,), "sign_clamp")


# ------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (2-D or stacked operands)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "matmul")


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand ``np.einsum`` with explicit output subscripts.

    Each input index must appear in the other input or in the output, and no
    operand may repeat an index.
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_s = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s in (sa, sb, out_s):
        if len(set(s)) != len(s):
            raise ShapeError(f"einsum: repeated index in {subscripts!r}")
    if set(sa) - set(sb) - set(out_s) or set(sb) - set(sa) - set(out_s):
        raise ShapeError(f"einsum: index summed within one operand in {subscripts!r}")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ShapeError(f"einsum {subscripts!r}: operand shapes {a.shape} and {b.shape}")
    sizes = {}
    for s, shape in ((sa, a.shape), (sb, b.shape)):
        for c, n in zip(s, shape):
            if sizes.setdefault(c, n) != n:
                raise ShapeError(f"einsum {subscripts!r}: index {c!r} mismatch for shapes {a.shape} and {b.shape}")
    out = np.einsum(f"{sa},{sb}->{out_s}", a.data, b.data, optimize=True)

    def backward(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_s},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "einsum")


def contract(a, b, axis_a: int, axis_b: int) -> Tensor:
    """Sum over one shared axis; remaining axes of ``a`` then ``b`` are kept."""
    a, b = as_tensor(a), as_tensor(b)
    letters = "abcdefghijklmnopqrstuvwxyz"
    sa = list(letters[: a.ndim])
    sb = list(letters[a.ndim : a.ndim + b.ndim])
    sb[axis_b] = sa[axis_a]
    shared = sa[axis_a]
    out = [c for c in sa if c != shared] + [c for c in sb if c != shared]
    return einsum(f"{''.join(sa)},{''.join(sb)}->{''.join(out)}", a, b)


# ------------------------------------------------------------------- shapes


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def getitem(a, index) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _make(out, (a,), backward, "getitem")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum_(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- reductions


def l2_norm(a, eps=1e-12, keepdims=False) -> Tensor:
    """Euclidean norm over the last axis, clamped below at ``eps``."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    clamped = n < eps
    out = np.where(clamped, eps, n)

    def backward(g):
        g = g if keepdims else g[..., None]
        safe = np.where(clamped, 1.0, n)
        return (np.where(clamped, 0.0, g * a.data / safe),)

    return _make(out if keepdims else out[..., 0], (a,), backward, "l2_norm")


def layer_norm(a, eps=1e-12) -> Tensor:
    """Standardize the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (a,), backward, "layer_norm")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum rows (axis 0) of ``a`` into ``num_segments`` buckets, in row order."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != a.shape[:1]:
        raise ShapeError(f"segment_sum: {seg.shape[0]} segment ids for {a.shape[0]} rows")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, seg, a.data)
    return _make(out, (a,), lambda g: (g[seg],), "segment_sum")


def segment_mean(a, segments, num_segments: int) -> Tensor:
    """Mean of rows per segment; empty segments give zeros."""
    counts = np.bincount(np.asarray(segments, dtype=np.int64), minlength=num_segments).astype(np.float64)
    inv = (1.0 / np.maximum(counts, 1.0)).reshape((-1,) + (1,) * (as_tensor(a).ndim - 1))
    return mul(segment_sum(a, segments, num_segments), inv)


def segment_max(a, segments, num_segments: int) -> Tensor:
    """Row-wise maximum per segment; the gradient goes to the first maximizer."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64)
    out = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(out, seg, a.data)
    rows = np.broadcast_to(np.arange(a.shape[0]).reshape((-1,) + (1,) * (a.ndim - 1)), a.shape)
    candidate = np.where(a.data == out[seg], rows, a.shape[0])
    first = np.full(out.shape, a.shape[0])
    np.minimum.at(first, seg, candidate)
    first_hit = rows == first[seg]
    out[~np.isfinite(out)] = 0.0

    def backward(g):
        return (np.where(first_hit, g[seg], 0.0),)

    return _make(out, (a,), backward, "segment_max")


def segment_softmax(a, segments, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, independently for each column."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != a.shape[:1]:
        raise ShapeError(f"segment_softmax: {seg.shape[0]} segment ids for {a.shape[0]} rows")
    peak = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(peak, seg, a.data)
    z = np.exp(a.data - peak[seg])
    total = np.zeros_like(peak)
    np.add.at(total, seg, z)
    out = z / total[seg]

    def backward(g):
        s = np.zeros_like(peak)
        np.add.at(s, seg, g * out)
        return (out * (g - s[seg]),)

    return _make(out, (a,), backward, "segment_softmax")


# ------------------------------------------------------------------ backward


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to parameters.

    Returns ``{name: gradient}`` for ``params`` (parameters that do not
    influence the loss get zeros) or, if ``params`` is None, for every
    trainable parameter reached from the loss. A recorded graph can be
    differentiated once; build a new forward pass for another call.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; run a fresh forward pass")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, np.ndarray] = {}
    found: list[Parameter] = []
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if isinstance(node, Parameter):
                    if id(node) not in leaves:
                        found.append(node)
                        leaves[id(node)] = g
                    else:
                        leaves[id(node)] = leaves[id(node)] + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._backward = None
            node._parents = ()
    loss._consumed = True
    if params is None:
        return {p.name: leaves[id(p)] for p in found}
    return {p.name: leaves.get(id(p), np.zeros_like(p.data)) for p in params}
