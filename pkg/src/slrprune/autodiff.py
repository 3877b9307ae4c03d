"""Dense tensors with tape-based reverse-mode differentiation.

Only the primitives the bundled models need are provided: ``matmul``,
``add`` (same shape or row bias), ``mul``, ``relu``, ``reshape``,
``conv2d``, ``maxpool2d`` and ``softmax_crossentropy``.

Operations are recorded on the active :class:`Tape` (entered with a
``with`` block) whenever one of their inputs requires a gradient::

    with Tape() as tape:
        loss = softmax_crossentropy(matmul(x, w), labels)
    tape.backward(loss)
    w.grad  # d loss / d w

Reductions that feed stepsize ratios (:func:`frobenius_norm_sq`,
:func:`trace_inner`) accumulate in float64.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import NonFiniteError, ShapeError

DTYPE = np.float32

_active_tapes: list[Tape] = []


class Tensor:
    """An n-dimensional array with an optional gradient buffer.

    ``data`` is float32 unless a float64 array is passed explicitly (used by
    gradient checks, where float32 round-off would swamp the comparison).
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(DTYPE, copy=False)
        if 0 in arr.shape:
            raise ShapeError(f"all extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    Recording order is a topological order of the graph, so a backward pass
    simply walks the record in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward):
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss, grad=None, visit=None):
        """Accumulate d(loss)/d(input) into ``.grad`` of every tracked input.

        Args:
            loss: output tensor to differentiate.
            grad: upstream gradient, defaults to ones.
            visit: optional callback ``visit(index)`` invoked once per node.
        """
        seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        for index in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[index]
            if visit is not None:
                visit(index)
            upstream = node.out.grad
            if upstream is None:
                continue
            grads = node.backward(upstream)
            for tensor, g in zip(node.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError("non-finite gradient during backward pass")
                tensor.grad = g if tensor.grad is None else tensor.grad + g


def _record(out, inputs, backward):
    if _active_tapes and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _active_tapes[-1].record(out, inputs, backward)
    return out


def _result(arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value in forward pass")
    return Tensor(arr)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data @ b.data)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), backward)


def add(a, b):
    """Elementwise sum; ``b`` may also be a bias row matching ``a``'s last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        out = _result(a.data + b.data)
        return _record(out, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        out = _result(a.data + b.data)
        return _record(out, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def relu(a):
    a = _as_tensor(a)
    positive = a.data > 0
    out = Tensor(np.where(positive, a.data, a.data.dtype.type(0)))
    return _record(out, (a,), lambda g: (np.where(positive, g, g.dtype.type(0)),))


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        arr = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: {err}") from None
    out = Tensor(arr)
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def softmax_crossentropy(logits, labels):
    """Mean cross-entropy of ``logits`` (batch, classes) against integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_crossentropy: logits {logits.shape}, labels {labels.shape}")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(labels.shape[0])
    value = float(np.mean(log_norm - z[rows, labels]))
    if not np.isfinite(value):
        raise NonFiniteError("non-finite cross-entropy")
    out = Tensor(np.asarray(value, dtype=logits.data.dtype))

    def backward(g):
        probs = np.exp(z - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return ((g / labels.shape[0]) * probs).astype(logits.data.dtype),

    return _record(out, (logits,), backward)


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x, w, b=None, padding=0):
    """Stride-1 cross-correlation of ``x`` (N, C, H, W) with ``w`` (F, C, kh, kw)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape}, kernel {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    xp = _pad(x.data, padding)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
    arr = np.einsum("nchwij,fcij->nfhw", windows, w.data, optimize=True)
    inputs = (x, w)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias {b.shape} for {w.shape[0]} filters")
        arr = arr + b.data[None, :, None, None]
        inputs = (x, w, b)
    out = _result(arr)

    def backward(g):
        gw = np.einsum("nfhw,nchwij->fcij", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        ho, wo = g.shape[2], g.shape[3]
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += np.einsum("nfhw,fc->nchw", g, w.data[:, :, i, j])
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        grads = [gxp, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _record(out, inputs, backward)


def maxpool2d(x, size=2):
    """Non-overlapping max pooling; the first maximum in each window wins ties."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d: spatial dims {h}x{w} not divisible by {size}")
    blocks = x.data.reshape(n, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, h // size, w // size, size * size)
    winner = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0])

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, winner[..., None], g[..., None], axis=-1)
        gblocks = gflat.reshape(n, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (gblocks.reshape(n, c, h, w),)

    return _record(out, (x,), backward)


def _array(a):
    return a.data if isinstance(a, Tensor) else np.asarray(a)


def frobenius_norm_sq(a):
    """Sum of squared entries, accumulated in float64."""
    arr = _array(a).astype(np.float64).ravel()
    return float(np.dot(arr, arr))


def trace_inner(a, b):
    """tr(AᵀB), i.e. the elementwise dot product, accumulated in float64."""
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise ShapeError(f"trace_inner: shapes {x.shape} and {y.shape} differ")
    return float(np.dot(x.astype(np.float64).ravel(), y.astype(np.float64).ravel()))
