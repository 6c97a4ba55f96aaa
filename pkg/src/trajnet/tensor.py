"""Minimal reverse-mode autodiff on float64 numpy arrays.

Only the operations the network needs are provided: same-padded stride-1
2D convolution, leaky rectifier, inverted dropout and a handful of
elementwise/reduction ops for the loss. Activations may carry a leading
batch axis ([N, C, H, W]); filters are always [C_out, C_in, kH, kW].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, UsageError

DTYPE = np.float64


class Tensor:
    """A value node in the computation graph.

    Leaves created by the user accumulate gradients across ``backward``
    calls; interior nodes are reset at the start of every pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "op")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None,
                 op=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return scale(tsum(self), 1.0 / self.data.size)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 else axes)

    def __getitem__(self, index):
        return take(self, index)


def _wrap(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=DTYPE), like.shape))


def _node(data, parents, backward_fn, op):
    # Parents are kept even without grad so graphs stay inspectable.
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents,
                  _backward=backward_fn if needs else None, op=op)


def _toposort(root):
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        if node._parents:
            node.grad = np.zeros_like(node.data)
    if loss._parents:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad += 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _check_same(a, b, "add")

    def _bw(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    return _node(a.data + b.data, (a, b), _bw, "add")


def sub(a, b):
    _check_same(a, b, "sub")

    def _bw(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad -= g

    return _node(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b):
    _check_same(a, b, "mul")

    def _bw(g):
        if a.requires_grad:
            a.grad += g * b.data
        if b.requires_grad:
            b.grad += g * a.data

    return _node(a.data * b.data, (a, b), _bw, "mul")


def scale(a, factor):
    def _bw(g):
        a.grad += factor * g

    return _node(a.data * factor, (a,), _bw, "scale")


def tsum(a):
    def _bw(g):
        a.grad += g

    return _node(np.sum(a.data), (a,), _bw, "tsum")


def reshape(a, shape):
    def _bw(g):
        a.grad += g.reshape(a.shape)

    return _node(a.data.reshape(shape), (a,), _bw, "reshape")


def transpose(a, axes):
    inverse = np.argsort(axes)

    def _bw(g):
        a.grad += g.transpose(inverse)

    return _node(a.data.transpose(axes), (a,), _bw, "transpose")


def take(a, index):
    """Basic (slice/int) indexing only."""

    def _bw(g):
        a.grad[index] += g

    return _node(a.data[index], (a,), _bw, "take")


def leaky_relu(x, slope):
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky slope must lie in (0, 1), got {slope}")
    factor = np.where(x.data >= 0.0, 1.0, slope)

    def _bw(g):
        x.grad += g * factor

    return _node(x.data * factor, (x,), _bw, "leaky_relu")


def dropout(x, rate, training, rng=None):
    """Inverted dropout; the identity outside training.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed. Masks are
    drawn from it in call order, so a seeded generator makes them
    reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout needs an rng")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def _bw(g):
        x.grad += g * mask

    return _node(x.data * mask, (x,), _bw, "dropout")


def conv2d(x, weight, bias=None):
    """Cross-correlation with zero 'same' padding and stride 1.

    x: [C_in, H, W] or [N, C_in, H, W]; weight: [C_out, C_in, kH, kW];
    bias: [C_out] or None.
    """
    xd = x.data
    batched = xd.ndim == 4
    if xd.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be 3D or 4D, got shape {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4D, got shape {weight.shape}")
    if not batched:
        xd = xd[None]
    n, c, h, w = xd.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")

    wm = weight.data.reshape(c_out, c_in * kh * kw)
    if kh == 1 and kw == 1:
        flat = xd.reshape(n, c, h * w)
        out = np.matmul(wm, flat).reshape(n, c_out, h, w)
        cols = None
    else:
        ph, pw = kh // 2, kw // 2
        padded = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * kh * kw)
        out = (cols @ wm.T).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    if not batched:
        out = out[0]
    out = np.ascontiguousarray(out)

    def _bw(g):
        g4 = g if batched else g[None]
        if bias is not None and bias.requires_grad:
            bias.grad += g4.sum(axis=(0, 2, 3))
        if cols is None:
            gflat = g4.reshape(n, c_out, h * w)
            if weight.requires_grad:
                gw = gflat.transpose(1, 0, 2).reshape(c_out, -1)
                xf = flat.transpose(1, 0, 2).reshape(c, -1)
                weight.grad += (gw @ xf.T).reshape(weight.shape)
            if x.requires_grad:
                gx = np.matmul(wm.T, gflat).reshape(n, c, h, w)
                x.grad += gx if batched else gx[0]
            return
        gm = g4.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        if weight.requires_grad:
            weight.grad += (gm.T @ cols).reshape(weight.shape)
        if x.requires_grad:
            gcols = (gm @ wm).reshape(n, h, w, c, kh, kw)
            gpad = np.zeros((n, c, h + 2 * (kh // 2), w + 2 * (kw // 2)))
            for i in range(kh):
                for j in range(kw):
                    gpad[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gpad[:, :, kh // 2:kh // 2 + h, kw // 2:kw // 2 + w]
            x.grad += gx if batched else gx[0]

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, _bw, "conv2d")


def glorot_uniform(shape, rng):
    """Uniform in +-sqrt(6 / (fan_in + fan_out)), fans counted per filter."""
    c_out, c_in, kh, kw = shape
    area = kh * kw
    limit = np.sqrt(6.0 / (c_in * area + c_out * area))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One in-place Adam update of ``params`` (name -> ndarray)."""
    if set(params) != set(grads):
        raise DimensionError("adam_step: parameter and gradient names differ")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise DimensionError(
                f"adam_step: gradient for {name!r} has shape {grads[name].shape}, "
                f"parameter has {p.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise DimensionError(f"adam_step: moment shape mismatch for {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in sorted(params):
        p, g = params[name], grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Adam over a dict of leaf tensors, reading their ``grad`` fields."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
        self.params = params
        self.state = state or AdamState(lr, beta1, beta2, eps)

    @property
    def lr(self):
        return self.state.learning_rate

    @lr.setter
    def lr(self, value):
        self.state.learning_rate = value

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        adam_step({k: p.data for k, p in self.params.items()},
                  {k: p.grad for k, p in self.params.items()}, self.state)
