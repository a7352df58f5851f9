"""Small reverse-mode automatic differentiation over numpy float64 arrays.

Images use NHWC layout. Apart from scalars, operands must have identical
shapes; the few places that need a broadcast (bias addition, per-channel
scale) have dedicated ops.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="", name=""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=""):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _node(data, parents, backward, op):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward, op=op)


def _is_scalar(x):
    return not isinstance(x, Tensor) and np.ndim(x) == 0


# ---------------------------------------------------------------- graph


def backward(loss):
    """Propagate d(loss)/d(.) into every reachable leaf with requires_grad.

    Leaf gradients accumulate (+=) so several backward passes sum up.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads = {id(loss): np.ones((), dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _topological(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


@contextmanager
def frozen(params):
    """Temporarily stop gradients from reaching ``params``."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


# ---------------------------------------------------------------- elementwise


def add(a, b):
    if _is_scalar(b):
        return _node(a.data + b, (a,), lambda g: (g,), "add")
    if _is_scalar(a):
        return add(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b):
    if _is_scalar(b):
        return add(a, -b)
    return add(a, neg(b))


def mul(a, b):
    """Elementwise product with a tensor, a same-shape constant array, or a scalar."""
    if _is_scalar(b):
        b = float(b)
        return _node(a.data * b, (a,), lambda g: (g * b,), "mul")
    if _is_scalar(a):
        return mul(b, a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=DTYPE)
        if c.shape != a.shape:
            raise ShapeError(f"mul: {a.shape} vs constant {c.shape}")
        return _node(a.data * c, (a,), lambda g: (g * c,), "mul")
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a, eps=None):
    """Natural log; with ``eps`` the input is clamped to >= eps first."""
    x = a.data
    if eps is not None:
        keep = x >= eps
        xc = np.where(keep, x, eps)
        return _node(np.log(xc), (a,), lambda g: (np.where(keep, g / xc, 0.0),), "log")
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope=0.01):
    scale = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------- reductions / shape


def sum_(a):
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, g, dtype=DTYPE),), "sum")


def sum_axis(a, axis):
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(out, (a,), bw, "sum_axis")


def mean(a):
    n = a.data.size
    shape = a.shape
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, g / n, dtype=DTYPE),), "mean")


def mean_axis(a, axis):
    n = np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_axis(a, axis), 1.0 / n) if n else sum_axis(a, axis)


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def slice_(a, index):
    shape = a.shape
    out = a.data[index]

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _node(np.array(out), (a,), bw, "slice")


def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), bw, "concat")


def gather_rows(a, index):
    """Row gather from a 2-D tensor; index -1 produces a zero row."""
    if a.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    if index.size and (index.max() >= n or index.min() < -1):
        raise ShapeError("gather_rows index out of range")
    valid = index >= 0
    safe = np.where(valid, index, 0)
    out = a.data[safe] * valid[:, None]

    def bw(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(full, safe[valid], g[valid])
        return (full,)

    return _node(out, (a,), bw, "gather_rows")


def scatter_rows(a, index, n):
    """Sum rows of ``a`` into an (n, F) result at ``index``; index -1 is dropped."""
    if a.ndim != 2 or len(index) != a.shape[0]:
        raise ShapeError("scatter_rows expects one index per row")
    index = np.asarray(index, dtype=np.int64)
    valid = index >= 0
    out = np.zeros((n, a.shape[1]), dtype=DTYPE)
    np.add.at(out, index[valid], a.data[valid])
    safe = np.where(valid, index, 0)

    def bw(g):
        return (g[safe] * valid[:, None],)

    return _node(out, (a,), bw, "scatter_rows")


# ---------------------------------------------------------------- linear algebra


def sparse_matmul(m, x):
    """Constant scipy sparse matrix (R,N) times a (N,F) tensor."""
    if x.ndim != 2 or m.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: {m.shape} @ {x.shape}")
    mt = m.T.tocsr()
    return _node(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(mt @ g),), "sparse_matmul")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _node(ad @ bd, (a, b), bw, "matmul")


def bias_add(x, b):
    """x[..., F] + b[F]."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: {x.shape} + {b.shape}")
    axes = tuple(range(x.ndim - 1))
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)), "bias_add")


def linear(x, w, b=None):
    """x @ w (+ b), fused into one node."""
    if b is None:
        return matmul(x, w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: {x.shape} @ {w.shape} + {b.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    out += b.data

    def bw(g):
        return (g @ wd.T if x.requires_grad else None, xd.T @ g if w.requires_grad else None,
                g.sum(axis=0))

    return _node(out, (x, w, b), bw, "linear")


def softmax(a):
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), bw, "softmax")


def log_softmax(a):
    x = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=-1, keepdims=True))
    out = x - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), bw, "log_softmax")


# ---------------------------------------------------------------- 2-D ops (NHWC)


def conv2d(x, w, b=None):
    """Stride-1, zero 'same'-padded convolution. x: (N,H,W,Cin), w: (k,k,Cin,Cout).

    Computed as a sum of k*k shifted matmuls, which avoids materialising the
    k*k-times larger im2col buffer.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects NHWC input and (k,k,Cin,Cout) weights")
    k, k2, cin, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError("conv2d needs an odd square kernel")
    n, h, wd, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {cin}")
    p = k // 2
    if k == 1:
        xp = x.data
        out = x.data @ w.data[0, 0]
    else:
        xp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=DTYPE)
        xp[:, p:p + h, p:p + wd, :] = x.data
        out = np.zeros((n, h, wd, cout), dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                out += xp[:, i:i + h, j:j + wd, :] @ w.data[i, j]
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gw = gx = None
        if k == 1:
            if w.requires_grad:
                gw = (xp.reshape(-1, cin).T @ g.reshape(-1, cout)).reshape(w.shape)
            if x.requires_grad:
                gx = g @ w.data[0, 0].T
        else:
            gf = g.reshape(-1, cout)
            if w.requires_grad:
                gw = np.empty(w.shape, dtype=DTYPE)
                for i in range(k):
                    for j in range(k):
                        gw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, cin).T @ gf
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i:i + h, j:j + wd, :] += g @ w.data[i, j].T
                gx = gxp[:, p:p + h, p:p + wd, :]
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return _node(out, parents, bw, "conv2d")


def max_pool2d(x, size=2):
    n, h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError(f"max_pool2d: {h}x{w} not divisible by {size}")
    blocks = x.data.reshape(n, h // size, size, w // size, size, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // size, w // size, c, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        onehot = np.zeros(blocks.shape, dtype=DTYPE)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        gx = onehot.reshape(n, h // size, w // size, c, size, size).transpose(0, 1, 4, 2, 5, 3)
        return (gx.reshape(n, h, w, c),)

    return _node(out, (x,), bw, "max_pool2d")


def upsample2d(x, size=2):
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, size, axis=1), size, axis=2)

    def bw(g):
        return (g.reshape(n, h, size, w, size, c).sum(axis=(2, 4)),)

    return _node(out, (x,), bw, "upsample2d")


def instance_norm_2d(x, gamma, beta, eps=1e-5):
    """Per (sample, channel) plane normalisation followed by a learnable affine map."""
    if x.ndim != 4 or gamma.shape != (x.shape[3],) or beta.shape != (x.shape[3],):
        raise ShapeError("instance_norm_2d: shape mismatch")
    xd = x.data
    mu = xd.mean(axis=(1, 2), keepdims=True)
    var = xd.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gg = g * gamma.data
        gx = inv * (gg - gg.mean(axis=(1, 2), keepdims=True)
                    - xhat * (gg * xhat).mean(axis=(1, 2), keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 1, 2)), g.sum(axis=(0, 1, 2))

    return _node(out, (x, gamma, beta), bw, "instance_norm_2d")


# ---------------------------------------------------------------- verification


def grad_check(fn, point, h=1e-5):
    """Max relative error between the analytic gradient of ``fn`` and central differences.

    ``fn`` maps a Tensor to a scalar Tensor. The error for one coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    point = np.array(point, dtype=DTYPE)
    x = Tensor(point.copy(), requires_grad=True)
    backward(fn(x))
    analytic = np.zeros_like(point) if x.grad is None else x.grad
    numeric = np.zeros_like(point)
    flat = point.reshape(-1)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        fu = float(fn(Tensor(up.reshape(point.shape))).data)
        fd = float(fn(Tensor(down.reshape(point.shape))).data)
        numeric.reshape(-1)[i] = (fu - fd) / (2 * h)
    return _max_rel(analytic, numeric)


def check_parameters(loss_fn, params, h=1e-5, max_coords=None, rng=None):
    """grad_check over parameter tensors in place.

    ``loss_fn()`` rebuilds the graph from the current parameter values. When
    ``max_coords`` is given, that many random coordinates per tensor are
    checked instead of all of them.
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fu = float(loss_fn().data)
            flat[i] = old - h
            fd = float(loss_fn().data)
            flat[i] = old
            num = (fu - fd) / (2 * h)
            worst = max(worst, abs(analytic.reshape(-1)[i] - num) / max(1.0, abs(num)))
        p.grad = None
    return worst


def _max_rel(analytic, numeric):
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
