"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable primitive is a pair ``(fwd, bwd)`` over plain numpy
arrays.  When a :class:`Tape` is active and at least one input requires a
gradient, the call is appended to the tape; :meth:`Tape.backward` walks the
trace in reverse.  Without an active tape, operations run eagerly and record
nothing, which is how frozen towers and finite-difference probes run.
"""

import contextlib

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_default_dtype = np.dtype(np.float32)
_tape_stack = []


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_grad():
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad = None

    @classmethod
    def _wrap(cls, array):
        t = object.__new__(Tensor)
        t.data = array
        t.requires_grad = False
        t.grad = None
        return t

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
    def T(self):
        return swapaxes(self, -1, -2)

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
        return len(self.data)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


class Parameter(Tensor):
    """A named leaf tensor; frozen parameters never accumulate gradient."""

    __slots__ = ("name", "trainable")

    def __init__(self, value, name=None, trainable=True, dtype=None):
        super().__init__(value, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, shape={self.shape}{flag})"

    def set_trainable(self, flag):
        self.trainable = bool(flag)
        self.requires_grad = bool(flag)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, value):
        # Replace rather than mutate so tensors captured on old tapes stay valid.
        self.data = np.array(value, dtype=self.data.dtype)
        if self.grad.shape != self.data.shape or self.grad.dtype != self.data.dtype:
            self.grad = np.zeros_like(self.data)


class _Node:
    __slots__ = ("name", "fwd", "bwd", "inputs", "out")

    def __init__(self, name, fwd, bwd, inputs, out):
        self.name = name
        self.fwd = fwd
        self.bwd = bwd
        self.inputs = inputs
        self.out = out


class Tape:
    """Ordered trace of differentiable calls executed while the tape is active."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, only=None):
        """Accumulate d(loss)/d(param) into ``param.grad`` for trainable leaves.

        ``only`` restricts accumulation to a subset of parameters; the reverse
        sweep itself is unchanged.  Gradients are added, never reset.
        """
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            raise ContractError("backward needs a scalar loss tensor")
        if not loss.requires_grad:
            raise ContractError("loss is not reachable from any recorded operation")
        allowed = None if only is None else {id(p) for p in only}
        produced = {id(node.out) for node in self.nodes}
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.bwd(g, node.out.data, *[x.data for x in node.inputs])
            for x, gx in zip(node.inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                gx = _unbroadcast(gx, x.data.shape)
                key = id(x)
                if key in produced:
                    prev = grads.get(key)
                    grads[key] = gx if prev is None else prev + gx
                elif isinstance(x, Parameter):
                    if x.trainable and (allowed is None or key in allowed):
                        x.grad = x.grad + gx
                else:
                    x.grad = gx if x.grad is None else x.grad + gx

    def replay(self):
        """Recompute every recorded output from its recorded inputs."""
        return [node.fwd(*[x.data for x in node.inputs]) for node in self.nodes]

    def replay_matches(self):
        for node, again in zip(self.nodes, self.replay()):
            ref = node.out.data
            if again.dtype != ref.dtype or again.shape != ref.shape:
                return False
            if np.ascontiguousarray(again).tobytes() != np.ascontiguousarray(ref).tobytes():
                return False
        return True


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _default_dtype
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _apply(name, fwd, bwd, *inputs):
    try:
        # non-finite results are reported below as NumericError, not warnings
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = fwd(*[x.data for x in inputs])
    except ValueError as exc:
        raise ShapeError(f"{name}: {exc}") from None
    if not np.isfinite(out).all():
        raise NumericError(f"{name} produced non-finite values")
    t = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        tape.nodes.append(_Node(name, fwd, bwd, inputs, t))
    return t


def _binary_operands(a, b):
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    a, b = _binary_operands(a, b)
    return _apply("add", np.add, lambda g, o, x, y: (g, g), a, b)


def sub(a, b):
    a, b = _binary_operands(a, b)
    return _apply("sub", np.subtract, lambda g, o, x, y: (g, -g), a, b)


def mul(a, b):
    a, b = _binary_operands(a, b)
    return _apply("mul", np.multiply, lambda g, o, x, y: (g * y, g * x), a, b)


def div(a, b):
    a, b = _binary_operands(a, b)
    return _apply("div", np.divide, lambda g, o, x, y: (g / y, -g * o / y), a, b)


def neg(a):
    return _apply("neg", np.negative, lambda g, o, x: (-g,), as_tensor(a))


def power(a, exponent):
    p = float(exponent)
    return _apply(
        "power",
        lambda x: x ** p,
        lambda g, o, x: (g * p * x ** (p - 1),),
        as_tensor(a),
    )


def relu(a):
    return _apply(
        "relu", lambda x: np.maximum(x, 0), lambda g, o, x: (g * (x > 0),), as_tensor(a)
    )


def tanh(a):
    return _apply("tanh", np.tanh, lambda g, o, x: (g * (1 - o * o),), as_tensor(a))


def sigmoid(a):
    return _apply(
        "sigmoid",
        lambda x: 0.5 * (np.tanh(0.5 * x) + 1),
        lambda g, o, x: (g * o * (1 - o),),
        as_tensor(a),
    )


def exp(a):
    return _apply("exp", np.exp, lambda g, o, x: (g * o,), as_tensor(a))


def log(a):
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NumericError("log of non-positive value")
    return _apply("log", np.log, lambda g, o, x: (g / x,), a)


def sqrt(a):
    return _apply("sqrt", np.sqrt, lambda g, o, x: (g * 0.5 / o,), as_tensor(a))


# -- contractions and reductions --------------------------------------------

def _matmul_bwd(g, o, x, y):
    gx = g @ np.swapaxes(y, -1, -2)
    if y.ndim == 2:
        k, m = y.shape
        gy = x.reshape(-1, k).T @ g.reshape(-1, m)
    else:
        gy = np.swapaxes(x, -1, -2) @ g
    return gx, gy


def matmul(a, b):
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return _apply("matmul", np.matmul, _matmul_bwd, a, b)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    return _apply(
        "sum",
        lambda x: np.sum(x, axis=axis, keepdims=keepdims),
        lambda g, o, x: (_expand_reduced(g, x.shape, axis, keepdims),),
        a,
    )


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return _apply(
        "mean",
        lambda x: np.mean(x, axis=axis, keepdims=keepdims),
        lambda g, o, x: (_expand_reduced(g, x.shape, axis, keepdims) / count,),
        a,
    )


# -- shape manipulation -----------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    return _apply(
        "reshape",
        lambda x: x.reshape(shape),
        lambda g, o, x: (g.reshape(x.shape),),
        a,
    )


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _apply(
        "transpose",
        lambda x: np.transpose(x, axes),
        lambda g, o, x: (np.transpose(g, inverse),),
        a,
    )


def swapaxes(a, axis1, axis2):
    a = as_tensor(a)
    return _apply(
        "swapaxes",
        lambda x: np.swapaxes(x, axis1, axis2),
        lambda g, o, x: (np.swapaxes(g, axis1, axis2),),
        a,
    )


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _apply(
        "broadcast_to", lambda x: np.broadcast_to(x, shape), lambda g, o, x: (g,), a
    )


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, index):
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def bwd(g, o, x):
        full = np.zeros_like(x)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _apply("getitem", lambda x: x[index], bwd, a)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of no tensors")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _apply(
        "concat",
        lambda *xs: np.concatenate(xs, axis=axis),
        lambda g, o, *xs: tuple(np.split(g, cuts, axis=axis)),
        *tensors,
    )


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of no tensors")
    n = len(tensors)
    return _apply(
        "stack",
        lambda *xs: np.stack(xs, axis=axis),
        lambda g, o, *xs: tuple(np.take(g, i, axis=axis) for i in range(n)),
        *tensors,
    )


# -- normalized maps --------------------------------------------------------

def _softmax(x, axis):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    return _apply(
        "softmax",
        lambda x: _softmax(x, axis),
        lambda g, o, x: (o * (g - (g * o).sum(axis=axis, keepdims=True)),),
        a,
    )


def _log_softmax(x, axis):
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("log_softmax over an empty axis")
    return _apply(
        "log_softmax",
        lambda x: _log_softmax(x, axis),
        lambda g, o, x: (g - np.exp(o) * g.sum(axis=axis, keepdims=True),),
        a,
    )


def layer_norm(x, gain, bias, eps=1e-5):
    """gain * (x - mean) / sqrt(var + eps) + bias over the last axis."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("layer_norm needs a non-empty last axis")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    gain, bias = as_tensor(gain, x), as_tensor(bias, x)

    def stats(v):
        mu = v.mean(axis=-1, keepdims=True)
        centered = v - mu
        rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
        return centered * rstd, rstd

    def fwd(v, w, b):
        xhat, _ = stats(v)
        return xhat * w + b

    def bwd(g, o, v, w, b):
        xhat, rstd = stats(v)
        gh = g * w
        gx = rstd * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g * xhat, g

    return _apply("layer_norm", fwd, bwd, x, gain, bias)


def l2_normalize(a, axis=-1, eps=1e-12):
    """x / (||x|| + eps) along ``axis``."""
    a = as_tensor(a)

    def fwd(x):
        return x / (np.sqrt((x * x).sum(axis=axis, keepdims=True)) + eps)

    def bwd(g, o, x):
        norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
        n = norm + eps
        safe = np.where(norm > 0, norm, 1.0)
        proj = (g * x).sum(axis=axis, keepdims=True)
        return (g / n - x * proj / (n * n * safe),)

    return _apply("l2_normalize", fwd, bwd, a)


def cosine(a, b, axis=-1):
    """Cosine similarity along ``axis``; flat vectors give a scalar."""
    return sum_(l2_normalize(a, axis) * l2_normalize(b, axis), axis=axis)


def conv1d_same(x, kernel, bias):
    """Single-channel 1-D cross-correlation over the last axis, zero padded."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    k = kernel.shape[0]
    if kernel.ndim != 1 or k % 2 == 0:
        raise ShapeError("conv1d_same needs an odd-length 1-D kernel")
    pad = k // 2
    length = x.shape[-1]

    def padded(v):
        widths = [(0, 0)] * (v.ndim - 1) + [(pad, pad)]
        return np.pad(v, widths)

    def fwd(v, w, b):
        vp = padded(v)
        out = np.zeros_like(v) + b
        for j in range(k):
            out = out + w[j] * vp[..., j:j + length]
        return out

    def bwd(g, o, v, w, b):
        vp = padded(v)
        gp = np.zeros(v.shape[:-1] + (length + 2 * pad,), dtype=v.dtype)
        gw = np.empty_like(w)
        for j in range(k):
            gp[..., j:j + length] += w[j] * g
            gw[j] = (g * vp[..., j:j + length]).sum()
        return gp[..., pad:pad + length], gw, g.sum()

    return _apply("conv1d_same", fwd, bwd, x, kernel, bias)


def scaled_dot_attention(q, k, v):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if k.shape[-2] == 0:
        raise ShapeError("attention needs at least one key")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    weights = softmax(matmul(q, swapaxes(k, -1, -2)) * scale, axis=-1)
    return matmul(weights, v)
