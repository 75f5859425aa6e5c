"""Parameter containers and the transformer building blocks shared by every tower."""

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .errors import CheckpointMismatch, ShapeError


class Module:
    """Attribute-walking parameter container.

    Parameters are discovered through instance attributes (including lists of
    modules).  A parameter reachable along several paths is reported once,
    under the first path found, which is how shared storage stays shared.
    """

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix="", _seen=None):
        seen = set() if _seen is None else _seen
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield path, value
            else:
                yield from value.named_parameters(path + ".", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def assign_names(self):
        for path, p in self.named_parameters():
            p.name = path
        return self

    def freeze(self):
        for p in self.parameters():
            p.set_trainable(False)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        for name in sorted(set(own) | set(state)):
            if name not in own or name not in state:
                raise CheckpointMismatch(f"parameter census differs at {name!r}", name)
            value = np.asarray(state[name])
            if value.shape != own[name].shape:
                raise CheckpointMismatch(
                    f"shape of {name!r} differs: {value.shape} vs {own[name].shape}", name
                )
        for name, p in own.items():
            p.data = np.array(state[name], dtype=p.data.dtype)
            p.zero_grad()


def normal(rng, shape, std):
    return rng.standard_normal(shape) * std


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, std=None):
        std = 1.0 / np.sqrt(d_in) if std is None else std
        self.weight = Parameter(normal(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = ag.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias

    def set_identity(self):
        d_in, d_out = self.weight.shape
        self.weight.assign(np.eye(d_in, d_out))
        if self.bias is not None:
            self.bias.assign(np.zeros(d_out))

    def set_zero(self):
        self.weight.assign(np.zeros(self.weight.shape))
        if self.bias is not None:
            self.bias.assign(np.zeros(self.bias.shape))


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.bias, self.eps)


def split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


class MultiHeadAttention(Module):
    # Key projections carry no bias: a shared key offset cancels in the softmax.
    def __init__(self, d, heads, rng, d_kv=None):
        if d % heads:
            raise ShapeError(f"width {d} not divisible by {heads} heads")
        d_kv = d if d_kv is None else d_kv
        self.heads = heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d_kv, d, rng, bias=False)
        self.wv = Linear(d_kv, d, rng)
        self.wo = Linear(d, d, rng)

    def __call__(self, xq, xkv):
        q = split_heads(self.wq(xq), self.heads)
        k = split_heads(self.wk(xkv), self.heads)
        v = split_heads(self.wv(xkv), self.heads)
        return self.wo(merge_heads(ag.scaled_dot_attention(q, k, v)))


class MLP(Module):
    """W2 relu(W1 x + b1) + b2."""

    def __init__(self, d, hidden, rng, d_out=None):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d if d_out is None else d_out, rng)

    def __call__(self, x):
        return self.fc2(ag.relu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm self-attention block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, d, heads, rng, mlp_ratio=4):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(d, mlp_ratio * d, rng)

    def __call__(self, x):
        h = self.ln1(x)
        x = x + self.attn(h, h)
        return x + self.mlp(self.ln2(x))

    def set_identity(self):
        """Zero both residual branches so the block passes its input through."""
        self.attn.wo.set_zero()
        self.mlp.fc2.set_zero()
