"""A small reverse-mode automatic differentiation core on top of numpy.

Each operation that touches a tensor requiring gradients records a node
holding its parents and a closure mapping the output gradient to parent
gradients.  :func:`backward` orders the recorded nodes topologically and
replays them in reverse.
"""

from contextlib import contextmanager

import numpy as np

from .errors import InvalidArgument, NonFiniteError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense array with an optional gradient buffer.

    Image-like tensors are laid out N x C x H x W.  Scalars (losses) are
    zero-dimensional.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "stochastic", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.stochastic = False
        self.name = name

    # -- array protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    # -- arithmetic -------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InvalidArgument("division is only defined by a scalar")
        return mul(self, 1.0 / other)

    def square(self):
        return square(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self, params=None):
        backward(self, params)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def make(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of an op, recording it if needed."""
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise InvalidArgument(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = float(b)
        return make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same(a, b, "add")
    return make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        c = b.data.dtype.type(float(a))
        return make(c - b.data, (b,), lambda g: (-g,), "rsub_scalar")
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(float(b))
        return make(a.data - c, (a,), lambda g: (g,), "sub_scalar")
    _check_same(a, b, "sub")
    return make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(float(b))
        return make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def square(a):
    ad = a.data
    return make(ad * ad, (a,), lambda g: (2 * ad * g,), "square")


def tsum(a):
    shape, dtype = a.shape, a.dtype
    return make(np.asarray(a.data.sum(dtype=dtype), dtype=dtype), (a,),
                lambda g: (np.broadcast_to(g, shape).astype(dtype, copy=True),), "sum")


def mean(a):
    n = a.size
    shape, dtype = a.shape, a.dtype
    return make(np.asarray(a.data.mean(dtype=dtype), dtype=dtype), (a,),
                lambda g: (np.full(shape, g / n, dtype=dtype),), "mean")


def reshape(a, shape):
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def relu(a):
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    y = np.tanh(a.data)
    return make(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def concat(tensors, axis=1):
    """Concatenate along ``axis`` (channels by default)."""
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise InvalidArgument(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    if axis == 1 and len(ref) == 4:
        # keep channels-last storage for the convolution that follows
        data = np.concatenate([t.data.transpose(0, 2, 3, 1) for t in tensors], axis=3)
        data = data.transpose(0, 3, 1, 2)
    else:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    return make(data, tensors, bw, "concat")


def crop(a, top, left, height, width):
    """Spatial crop of an N x C x H x W tensor."""
    n, c, h, w = a.shape
    if top < 0 or left < 0 or top + height > h or left + width > w or height <= 0 or width <= 0:
        raise InvalidArgument(f"crop region ({top},{left},{height},{width}) outside {h}x{w}")
    out = a.data[:, :, top:top + height, left:left + width].copy(order="K")

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[:, :, top:top + height, left:left + width] = g
        return (full,)

    return make(out, (a,), bw, "crop")


def _topo_order(tail):
    order, seen = [], set()
    stack = [(tail, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def graph_nodes(tail):
    """All recorded nodes reachable from ``tail`` (inputs first)."""
    return _topo_order(tail)


def backward(tail, params=None, retain_graph=False):
    """Populate ``.grad`` of every leaf reachable from the scalar ``tail``.

    If ``params`` (an iterable of leaf tensors or a ParamSet) is given, each
    gets a zero gradient buffer first, so unreachable parameters end up with
    an exact zero gradient.
    """
    if tail.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {tail.shape}")
    if not np.isfinite(tail.data).all():
        raise NonFiniteError(f"loss is not finite: {tail.data}")
    if params is not None:
        for p in (params.values() if hasattr(params, "values") else params):
            if p.requires_grad and p.grad is None:
                p.zero_grad()
    if not tail.requires_grad:
        return
    grads = {id(tail): np.ones(tail.shape, dtype=tail.dtype)}
    for node in reversed(_topo_order(tail)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not retain_graph:
            node._parents = ()
            node._backward = None
    if params is not None:
        for name, p in (params.items() if hasattr(params, "items") else enumerate(params)):
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteError(f"non-finite gradient for {name}")
