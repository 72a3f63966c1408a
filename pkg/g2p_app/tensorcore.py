"""Dense tensors with reverse-mode automatic differentiation.

Storage is a row-major NumPy array per tensor. Every op records a ``Node``
(op name, input tensors, backward closure) on its output when gradients are
enabled and at least one input requires them; ``Tensor.backward`` walks the
graph once in reverse topological order and then releases it.

Values default to 32-bit floats. ``precision(np.float64)`` switches new tensors
to 64-bit, which the finite-difference gradient checks need.
"""
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ArgumentError, ConfigurationError, DimensionError, GraphError, NumericError,
)

logger = logging.getLogger(__name__)

MASK_FILL = -1e9

_state = {
    'dtype': np.float32,
    'grad_enabled': True,
}


def get_default_dtype():
    return _state['dtype']


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigurationError(f'unsupported tensor dtype {dtype!r}; use float32 or float64')
    _state['dtype'] = dtype


@contextmanager
def precision(dtype):
    previous = _state['dtype']
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state['dtype'] = previous


@contextmanager
def no_grad():
    previous = _state['grad_enabled']
    _state['grad_enabled'] = False
    try:
        yield
    finally:
        _state['grad_enabled'] = previous


def is_grad_enabled():
    return _state['grad_enabled']


class Node:
    """Op record attached to the output tensor of a differentiable op."""

    __slots__ = ('op', 'inputs', 'backward')

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward

    def __repr__(self):
        return f'Node({self.op}, inputs={len(self.inputs)})'


class Tensor:
    __slots__ = ('data', 'requires_grad', 'grad', 'node', 'name', '_consumed')
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        array = np.array(data, dtype=dtype or _state['dtype'])
        _check_finite(array, 'tensor')
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name
        self._consumed = False

    def __repr__(self):
        label = f' name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})'

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self, _swap_last(self.ndim))

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.tolist()

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.node = None
        out.name = self.name
        out._consumed = False
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._consumed:
            raise GraphError('backward already ran on this graph; run a new forward pass first')
        if self.node is None and not self.requires_grad:
            raise GraphError('tensor is detached from any graph; nothing to differentiate')
        if self.data.size != 1:
            raise GraphError(f'backward needs a scalar loss, got shape {list(self.shape)}')
        Graph(self).backward()

    # arithmetic
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

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

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


class Graph:
    """Topologically ordered view of the nodes reachable from a root tensor."""

    def __init__(self, root):
        self.root = root
        self.nodes = self._topological_order(root)

    @staticmethod
    def _topological_order(root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in tensor.node.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self):
        root = self.root
        grads = {id(root): np.ones_like(root.data)}
        for tensor in reversed(self.nodes):
            grad = grads.pop(id(tensor), None)
            if grad is None:
                continue
            if tensor.node is None:
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad
                continue
            tensor.grad = grad
            parent_grads = tensor.node.backward(grad)
            for parent, parent_grad in zip(tensor.node.inputs, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(parent_grad, parent.shape)
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
        for tensor in self.nodes:
            tensor.node = None
            tensor._consumed = tensor is not root or tensor._consumed
        root._consumed = True


def _check_finite(array, op):
    if not np.all(np.isfinite(array)):
        raise NumericError(f'{op} produced non-finite values')


def _swap_last(ndim):
    if ndim < 2:
        raise DimensionError('transpose needs at least 2 dimensions')
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(data, inputs, backward, op):
    data = np.asarray(data)
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    tracked = _state['grad_enabled'] and any(t.requires_grad for t in inputs)
    out.requires_grad = tracked
    out.node = Node(op, tuple(inputs), backward) if tracked else None
    return out


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b):
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def sub(a, b):
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), 'sub')


def mul(a, b):
    a, b = _pair(a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), 'mul')


def div(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return g / b.data, -g * a.data / (b.data * b.data)

    return _result(a.data / b.data, (a, b), backward, 'div')


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), 'neg')


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f'matmul shape mismatch: {list(a.shape)} @ {list(b.shape)}')
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f'matmul shape mismatch: {list(a.shape)} @ {list(b.shape)}') from exc

    def backward(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return _result(out, (a, b), backward, 'matmul')


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_reduced(g, shape, axes, keepdims):
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.array(np.broadcast_to(g, shape))


def tensor_sum(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return _result(out, (x,), lambda g: (_expand_reduced(g, x.shape, axes, keepdims),), 'sum')


def mean(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        return (_expand_reduced(g, x.shape, axes, keepdims) / count,)

    return _result(out, (x,), backward, 'mean')


def reshape(x, shape):
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), 'reshape')


def transpose(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), 'transpose')


def getitem(x, index):
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), backward, 'getitem')


def relu(x):
    return _result(np.maximum(x.data, 0), (x,), lambda g: (g * (x.data > 0),), 'relu')


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), 'sigmoid')


def clamp_between(x, a, b):
    """Clip ``x`` into the elementwise interval spanned by ``a`` and ``b``; gradient passes straight through."""
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    data = np.clip(x.data, np.minimum(a, b), np.maximum(a, b)).astype(x.data.dtype, copy=False)
    return _result(data, (x,), lambda g: (g,), 'clamp')


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    y = exps / exps.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, 'softmax')


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, 'log_softmax')


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f'layer_norm parameters {list(gamma.shape)}/{list(beta.shape)} '
            f'do not match features {x.shape[-1]}'
        )
    n = x.shape[-1]
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std

    def backward(g):
        g_norm = g * gamma.data
        gx = inv_std / n * (
            n * g_norm
            - g_norm.sum(axis=-1, keepdims=True)
            - normalized * (g_norm * normalized).sum(axis=-1, keepdims=True)
        )
        return gx, g * normalized, g

    return _result(normalized * gamma.data + beta.data, (x, gamma, beta), backward, 'layer_norm')


def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ArgumentError(f'embedding ids out of range [0, {table.shape[0]})')

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), backward, 'embedding')


def cross_entropy(logits, targets, ignore_index=0):
    """Mean negative log-likelihood of ``targets`` over non-ignored positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(
            f'cross_entropy: logits {list(logits.shape)} vs targets {list(targets.shape)}'
        )
    mask = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    count = int(mask.sum())
    if count == 0:
        raise ArgumentError('cross_entropy: every target position is padding')
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def backward(g):
        onehot = np.zeros_like(log_probs)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((np.exp(log_probs) - onehot) * mask[..., None] * (g / count),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, 'cross_entropy')


def conv1d(x, kernel, bias=None):
    """Same-padded 1-D convolution: ``[len, in] * [width, in, out] -> [len, out]``.

    A leading batch axis on ``x`` is carried through. Positions past either edge
    read as zeros.
    """
    width, in_ch, out_ch = kernel.shape
    if width % 2 == 0:
        raise ConfigurationError(f'conv1d kernel width must be odd, got {width}')
    batched = x.ndim == 3
    xb = x.data if batched else x.data[None]
    if xb.shape[-1] != in_ch:
        raise DimensionError(f'conv1d: input channels {xb.shape[-1]} vs kernel {in_ch}')
    n_batch, length, _ = xb.shape
    pad = width // 2
    padded = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    cols = np.stack([padded[:, j:j + length, :] for j in range(width)], axis=2)
    cols = cols.reshape(n_batch, length, width * in_ch)
    flat_kernel = kernel.data.reshape(width * in_ch, out_ch)
    out = cols @ flat_kernel
    if bias is not None:
        out = out + bias.data
    if not batched:
        out = out[0]

    def backward(g):
        gb = g if batched else g[None]
        g_kernel = (cols.reshape(-1, width * in_ch).T @ gb.reshape(-1, out_ch)).reshape(kernel.shape)
        g_cols = (gb @ flat_kernel.T).reshape(n_batch, length, width, in_ch)
        g_padded = np.zeros_like(padded)
        for j in range(width):
            g_padded[:, j:j + length, :] += g_cols[:, :, j, :]
        g_x = g_padded[:, pad:pad + length, :]
        grads = [g_x if batched else g_x[0], g_kernel]
        if bias is not None:
            grads.append(gb.reshape(-1, out_ch).sum(axis=0))
        return tuple(grads)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, inputs, backward, 'conv1d')


@dataclass
class AttentionWeights:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor


def attention_bias(mask, dtype):
    """Additive bias from a boolean mask where True marks an attendable key."""
    return Tensor(np.where(np.asarray(mask, dtype=bool), 0.0, MASK_FILL), dtype=dtype)


def causal_mask(length):
    return np.tril(np.ones((length, length), dtype=bool))


def multi_head_attention(query, key, value, weights, heads, mask=None):
    """Scaled dot-product attention split over ``heads``, then output-projected.

    Inputs are ``[L, d]`` or ``[B, L, d]``. ``mask`` is boolean and broadcastable
    to ``[B, heads, Lq, Lk]``. Returns ``(output, weights)`` where ``weights`` is
    the ``[B, heads, Lq, Lk]`` attention array.
    """
    d_model = query.shape[-1]
    if heads < 1 or d_model % heads:
        raise ConfigurationError(f'd_model {d_model} is not divisible by {heads} heads')
    batched = query.ndim == 3
    if not batched:
        query = query.reshape(1, *query.shape)
        key = key.reshape(1, *key.shape)
        value = value.reshape(1, *value.shape)
    n_batch, len_q, _ = query.shape
    len_k = key.shape[1]
    head_dim = d_model // heads

    def split(t, length):
        return t.reshape(n_batch, length, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(query @ weights.w_q, len_q)
    k = split(key @ weights.w_k, len_k)
    v = split(value @ weights.w_v, len_k)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))
    if mask is not None:
        scores = scores + attention_bias(mask, scores.dtype)
    probs = softmax(scores, axis=-1)
    context = (probs @ v).transpose(0, 2, 1, 3).reshape(n_batch, len_q, d_model)
    out = context @ weights.w_o
    if not batched:
        out = out.reshape(len_q, d_model)
    return out, probs.data


@dataclass
class GradientCheckResult:
    max_relative_error: float
    checked: int


def gradient_check(loss_fn, params, h=1e-5, samples=None, rng=None, floor=1e-7):
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``samples`` caps how many scalar entries are probed (all entries when None);
    entries are drawn uniformly over every parameter with ``rng``.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params]
    probes = [(i, idx) for i, p in enumerate(params) for idx in np.ndindex(p.shape)]
    if samples is not None and samples < len(probes):
        rng = rng or np.random.default_rng(0)
        chosen = rng.choice(len(probes), size=samples, replace=False)
        probes = [probes[c] for c in sorted(chosen)]
    worst = 0.0
    with no_grad():
        for i, idx in probes:
            p = params[i]
            original = p.data[idx]
            p.data[idx] = original + h
            plus = float(loss_fn().data)
            p.data[idx] = original - h
            minus = float(loss_fn().data)
            p.data[idx] = original
            numeric = (plus - minus) / (2 * h)
            exact = float(analytic[i][idx])
            scale = max(abs(numeric), abs(exact), floor)
            worst = max(worst, abs(numeric - exact) / scale)
    return GradientCheckResult(max_relative_error=worst, checked=len(probes))
