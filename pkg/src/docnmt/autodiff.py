"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation creates a new :class:`Tensor` that remembers
its parents and a closure mapping the output adjoint to input adjoints.
Nodes carry a monotonically increasing sequence number, so the set of nodes
reachable from a loss, sorted by that number, is exactly the order in which
the operations were recorded; :func:`backward` replays it in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

_seq = itertools.count()
_grad_enabled = True
_default_dtype = np.float32


class ShapeError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors (e.g. float64 for gradient checks)."""
    global _default_dtype
    old = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = old


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_consumed", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)
        self._consumed = False
        self.name = name

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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

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

    def backward(self):
        backward(self)


def parameter(data, name=None, dtype=None):
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward_fn):
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make((ad * bd).astype(ad.dtype, copy=False), (a, b), bw)


def div(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return _make((ad / bd).astype(ad.dtype, copy=False), (a, b), bw)


def relu(x):
    pos = x.data > 0

    def bw(g):
        return (g * pos,)

    return _make(np.where(pos, x.data, 0).astype(x.dtype, copy=False), (x,), bw)


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is true by ``value``; those entries get no gradient."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data).astype(x.dtype, copy=False)

    def bw(g):
        return (_unbroadcast(np.where(mask, 0, g), x.shape),)

    return _make(out, (x,), bw)


def dropout(x, p, rng):
    """Inverted dropout; identity when ``rng`` is None or ``p`` is zero."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def bw(g):
        return (g * keep,)

    return _make(x.data * keep, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def sum_(x, axis=None, keepdims=False):
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype),)

    return _make(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(x.data.transpose(axes), (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def embedding(weight, ids):
    """Row lookup ``weight[ids]``; gradients are scattered back with ``np.add.at``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")

    def bw(g):
        gw = np.zeros(weight.shape, dtype=g.dtype)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _make(weight.data[ids], (weight,), bw)


# ---------------------------------------------------------------------------
# normalisation and probability


def _check_axis(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")


def softmax(x, axis=-1):
    _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = (e / e.sum(axis=axis, keepdims=True, dtype=np.float64)).astype(x.dtype)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True, dtype=np.float64).astype(s.dtype)
        return (s * (g - dot),)

    return _make(s, (x,), bw)


def log_softmax(x, axis=-1):
    _check_axis(x, axis)
    z = x.data.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = (z - lse).astype(x.dtype)
    p = np.exp(out.astype(np.float64))

    def bw(g):
        gs = g.sum(axis=axis, keepdims=True, dtype=np.float64)
        return ((g - p * gs).astype(x.dtype),)

    return _make(out, (x,), bw)


def cross_entropy(logits, targets, pad_mask=None, label_smoothing=0.0):
    """Mean token negative log-likelihood over positions not flagged by ``pad_mask``.

    ``logits`` has shape ``[..., V]`` and ``targets`` the leading shape.  The
    log-softmax is fused into the loss and evaluated in float64.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets {targets.shape}")
    V = logits.shape[-1]
    keep = np.ones(targets.shape, dtype=bool) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise ValueError("empty loss support")
    safe_t = np.where(keep, targets, 0)
    if (safe_t < 0).any() or (safe_t >= V).any():
        raise IndexError(f"target id out of range [0, {V})")

    z = logits.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    nll = -np.take_along_axis(logp, safe_t[..., None], axis=-1)[..., 0]
    if label_smoothing:
        nll = (1.0 - label_smoothing) * nll - label_smoothing * logp.mean(axis=-1)
    loss = float((nll * keep).sum() / n)

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe_t[..., None], 1.0, axis=-1)
        if label_smoothing:
            onehot = (1.0 - label_smoothing) * onehot + label_smoothing / V
        d = (p - onehot) * (keep[..., None] * (float(g) / n))
        return (d.astype(logits.dtype),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data.astype(np.float64)
    out = (xhat * gd + bias.data).astype(x.dtype)
    D = x.shape[-1]

    def bw(g):
        g64 = g.astype(np.float64)
        gx = g64 * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        dgain = (g64 * xhat).sum(axis=lead)
        dbias = g64.sum(axis=lead)
        return dx.astype(x.dtype), dgain.astype(gain.dtype), dbias.astype(bias.dtype)

    assert gain.shape == (D,) and bias.shape == (D,)
    return _make(out, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise BackwardError("backward already called on this graph; rebuild the loss first")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor that requires grad")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)

    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        # release the closure so the tape can be collected
        t._backward = None
        t._parents = ()
    loss._consumed = True


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction.

    ``params`` and ``grads`` are mappings from name to Tensor / ndarray;
    missing gradients (``None``) count as zero.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        elif m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"optimizer state for {name} has shape {m.shape}, parameter has {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g.astype(np.float64) ** 2)
        state.m[name] = m
        state.v[name] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)


def global_grad_norm(grads):
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)
