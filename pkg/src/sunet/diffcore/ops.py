"""Differentiable operations over :class:`Tensor`.

Everything the two networks need: n-d channel-last convolution, batch norm,
activations, pooling/upsampling, concatenation, elementwise arithmetic with
broadcasting, reductions. Inputs are batched channel-last arrays: rank-4
``(N, H, W, C)`` for 2D and rank-5 ``(N, X, Y, Z, C)`` for 3D.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, grad_enabled, send_grad


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_tensor(x) -> Tensor:
    """Wrap plain arrays/scalars as untracked constant tensors."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(values, parents, backward_fn):
    parents = tuple(parents)
    if grad_enabled() and any(p.tracked for p in parents):
        return Tensor(values, _parents=parents, _backward=backward_fn)
    return Tensor(values)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _ntuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        if len(v) != n:
            raise ShapeError(f"expected {n} entries, got {len(v)}")
        return tuple(int(x) for x in v)
    return (int(v),) * n


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values + b.values

    def backward(go, pending):
        send_grad(pending, a, _unbroadcast(go, a.values.shape))
        send_grad(pending, b, _unbroadcast(go, b.values.shape))

    return _make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values - b.values

    def backward(go, pending):
        send_grad(pending, a, _unbroadcast(go, a.values.shape))
        send_grad(pending, b, _unbroadcast(-go, b.values.shape))

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values * b.values

    def backward(go, pending):
        send_grad(pending, a, _unbroadcast(go * b.values, a.values.shape))
        send_grad(pending, b, _unbroadcast(go * a.values, b.values.shape))

    return _make(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(go, pending):
        send_grad(pending, a, -go)

    return _make(-a.values, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.values)  # non-positive inputs fail the finite check

    def backward(go, pending):
        send_grad(pending, a, go / a.values)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# activations


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.values, 0.0)

    def backward(go, pending):
        send_grad(pending, a, go * (a.values > 0.0))

    return _make(out, (a,), backward)


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_values(a.values)

    def backward(go, pending):
        send_grad(pending, a, go * s * (1.0 - s))

    return _make(s, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.values.ndim <= axis < a.values.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {a.values.ndim}")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(go, pending):
        send_grad(pending, a, (go - (go * s).sum(axis=axis, keepdims=True)) * s)

    return _make(s, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.values.ndim <= axis < a.values.ndim:
        raise ShapeError(f"log_softmax axis {axis} out of range for rank {a.values.ndim}")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(go, pending):
        send_grad(pending, a, go - np.exp(out) * go.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(go, pending):
        g = go
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        send_grad(pending, a, np.broadcast_to(g, a.values.shape).copy())

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else a.values.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.values.reshape(shape)

    def backward(go, pending):
        send_grad(pending, a, go.reshape(a.values.shape))

    return _make(out, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.values for t in ts], axis=axis)
    sizes = [t.values.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(go, pending):
        for t, piece in zip(ts, np.split(go, splits, axis=axis)):
            send_grad(pending, t, piece)

    return _make(out, ts, backward)


def repeat_new_axis(a, reps: int, axis: int) -> Tensor:
    """Insert a new axis of length ``reps`` holding copies of the input."""
    a = as_tensor(a)
    if reps < 1:
        raise ShapeError("repeat count must be >= 1")
    out = np.repeat(np.expand_dims(a.values, axis), reps, axis=axis)
    pos = axis if axis >= 0 else out.ndim + axis

    def backward(go, pending):
        send_grad(pending, a, go.sum(axis=pos))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# convolution


def conv(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation over 2 or 3 spatial dims, channel-last.

    x: (N, *spatial, Cin); w: (*kernel, Cin, Cout); b: (Cout,) or None.
    Output spatial extent is (in + 2*pad - k) // stride + 1. Computed as one
    GEMM per kernel offset over contiguous shifted blocks, which beats a
    materialized patch matrix on channel-last layouts.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    nd = x.values.ndim - 2
    if nd not in (2, 3):
        raise ShapeError(f"conv expects rank-4 or rank-5 input, got rank {x.values.ndim}")
    if w.values.ndim != nd + 2:
        raise ShapeError(f"weight rank {w.values.ndim} does not match {nd}-d input")
    kernel = w.values.shape[:nd]
    cin, cout = w.values.shape[nd], w.values.shape[nd + 1]
    if x.values.shape[-1] != cin:
        raise ShapeError(f"input channels {x.values.shape[-1]} != weight channels {cin}")
    stride = _ntuple(stride, nd)
    padding = _ntuple(padding, nd)
    out_sp = tuple(
        (s + 2 * p - k) // st + 1
        for s, p, k, st in zip(x.values.shape[1:-1], padding, kernel, stride)
    )
    if any(o < 1 for o in out_sp):
        raise ShapeError(f"kernel {kernel} does not fit input {x.values.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.values.shape != (cout,):
            raise ShapeError(f"bias shape {b.values.shape} != ({cout},)")

    n = x.values.shape[0]
    offsets = list(np.ndindex(*kernel))

    def shifted_block(xp, off):
        src = tuple(slice(o, o + st * sz, st)
                    for o, st, sz in zip(off, stride, out_sp))
        return np.ascontiguousarray(xp[(slice(None), *src, slice(None))]) \
            .reshape(-1, cin)

    if any(padding):
        xp = np.pad(x.values, [(0, 0)] + [(p, p) for p in padding] + [(0, 0)])
    else:
        xp = x.values
    keep_blocks = grad_enabled() and w.tracked
    blocks = []
    out = np.zeros((n * int(np.prod(out_sp)), cout))
    for off in offsets:
        blk = shifted_block(xp, off)
        out += blk @ w.values[off]
        if keep_blocks:
            blocks.append(blk)
    if b is not None:
        out += b.values
    out = out.reshape((n, *out_sp, cout))

    def backward(go, pending):
        go_flat = go.reshape(-1, cout)
        if w.tracked:
            gw = np.empty_like(w.values)
            for off, blk in zip(offsets, blocks):
                gw[off] = blk.T @ go_flat
            send_grad(pending, w, gw)
        if b is not None and b.tracked:
            send_grad(pending, b, go_flat.sum(axis=0))
        if x.tracked:
            padded = [s + 2 * p for s, p in zip(x.values.shape[1:-1], padding)]
            gxp = np.zeros((n, *padded, cin))
            for off in offsets:
                dst = tuple(slice(o, o + st * sz, st)
                            for o, st, sz in zip(off, stride, out_sp))
                gxp[(slice(None), *dst, slice(None))] += \
                    (go_flat @ w.values[off].T).reshape((n, *out_sp, cin))
            if any(padding):
                core = tuple(slice(p, p + s)
                             for p, s in zip(padding, x.values.shape[1:-1]))
                gxp = gxp[(slice(None), *core, slice(None))]
            send_grad(pending, x, gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics buffer shared between train and eval passes."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over all non-channel axes (channel-last)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.values.shape[-1]
    if gamma.values.shape != (c,) or beta.values.shape != (c,):
        raise ShapeError("gamma/beta must match the channel count")
    axes = tuple(range(x.values.ndim - 1))
    if training:
        mu = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        state.running_mean += momentum * (mu - state.running_mean)
        state.running_var += momentum * (var - state.running_var)
    else:
        mu = state.running_mean
        var = state.running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * ivar
    out = gamma.values * xhat + beta.values

    def backward(go, pending):
        if gamma.tracked:
            send_grad(pending, gamma, (go * xhat).sum(axis=axes))
        if beta.tracked:
            send_grad(pending, beta, go.sum(axis=axes))
        if x.tracked:
            gxh = go * gamma.values
            if training:
                gx = ivar * (gxh - gxh.mean(axis=axes)
                             - xhat * (gxh * xhat).mean(axis=axes))
            else:
                gx = gxh * ivar
            send_grad(pending, x, gx)

    return _make(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# resolution changes


def max_pool(x, factor: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient routes to the first argmax."""
    x = as_tensor(x)
    xv = x.values
    nd = xv.ndim - 2
    spatial = xv.shape[1:-1]
    if any(s % factor for s in spatial):
        raise ShapeError(f"spatial dims {spatial} not divisible by {factor}")
    n, c = xv.shape[0], xv.shape[-1]
    out_sp = tuple(s // factor for s in spatial)

    blocked = [n]
    for o in out_sp:
        blocked += [o, factor]
    blocked += [c]
    win = xv.reshape(blocked)
    o_axes = [1 + 2 * i for i in range(nd)]
    f_axes = [2 + 2 * i for i in range(nd)]
    win = win.transpose((0, *o_axes, len(blocked) - 1, *f_axes))
    win = win.reshape((n, *out_sp, c, factor**nd))
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(go, pending):
        gwin = np.zeros((n, *out_sp, c, factor**nd))
        np.put_along_axis(gwin, arg[..., None], go[..., None], axis=-1)
        gwin = gwin.reshape((n, *out_sp, c) + (factor,) * nd)
        back = [0]
        for i in range(nd):
            back += [1 + i, nd + 2 + i]
        back += [nd + 1]
        send_grad(pending, x, gwin.transpose(back).reshape(xv.shape))

    return _make(out, (x,), backward)


def upsample(x, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling by an integer factor on all spatial axes."""
    x = as_tensor(x)
    xv = x.values
    nd = xv.ndim - 2
    out = xv
    for ax in range(1, nd + 1):
        out = np.repeat(out, factor, axis=ax)

    def backward(go, pending):
        blocked = [xv.shape[0]]
        for s in xv.shape[1:-1]:
            blocked += [s, factor]
        blocked += [xv.shape[-1]]
        g = go.reshape(blocked).sum(axis=tuple(2 + 2 * i for i in range(nd)))
        send_grad(pending, x, g)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# operator sugar on Tensor

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.sum = lambda self, axis=None, keepdims=False: tensor_sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Tensor.reshape = lambda self, shape: reshape(self, shape)
