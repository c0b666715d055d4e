"""Differentiable layers built on the kernel backend."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from . import kernels
from .tensor import Tensor, _node, add, as_tensor, matmul, mul, sigmoid, tanh, transpose, reshape


def same_padding(size, kernel, stride):
    """Output length ceil(size/stride) and (before, after) padding for it."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, (total // 2, total - total // 2)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1)) -> Tensor:
    """Same-padded 2-D convolution over (N, C, H, W) input."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} incompatible with kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d bias {b.shape} for {w.shape[0]} output channels")
    sh, sw = stride
    _, ph = same_padding(x.shape[2], w.shape[2], sh)
    _, pw = same_padding(x.shape[3], w.shape[3], sw)
    xp = np.ascontiguousarray(np.pad(x.data, ((0, 0), (0, 0), ph, pw)))
    wd = np.ascontiguousarray(w.data)
    y = kernels.conv2d_forward(xp, wd, np.ascontiguousarray(b.data), sh, sw)

    def bw(g):
        gxp, gw, gb = kernels.conv2d_backward(xp, wd, np.ascontiguousarray(g), sh, sw)
        gx = gxp[:, :, ph[0]:ph[0] + x.shape[2], pw[0]:pw[0] + x.shape[3]]
        return gx, gw, gb

    return _node(y, (x, w, b), bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride=1) -> Tensor:
    """Same-padded 1-D convolution; x (N, T, C_in), w (C_out, C_in, k) -> (N, T', C_out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d input {x.shape} incompatible with kernel {w.shape}")
    n, t, c = x.shape
    x4 = reshape(transpose(x, (0, 2, 1)), (n, c, t, 1))
    w4 = reshape(w, w.shape + (1,))
    y = conv2d(x4, w4, b, (stride, 1))
    return transpose(reshape(y, y.shape[:3]), (0, 2, 1))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (..., D_in) @ w (D_in, D_out) + b."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense input {x.shape} incompatible with weight {w.shape}")
    return add(matmul(x, w), b)


def lstm_sequence(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over x (N, T, D) from zero state; returns all hidden states (N, T, H)."""
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    hid = wh.shape[0]
    if x.ndim != 3 or wx.shape != (x.shape[2], 4 * hid) or wh.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise ShapeError(f"lstm shapes x={x.shape} wx={wx.shape} wh={wh.shape} b={b.shape}")
    xd = np.ascontiguousarray(x.data)
    wxd, whd = np.ascontiguousarray(wx.data), np.ascontiguousarray(wh.data)
    hs, cache = kernels.lstm_forward(xd, wxd, whd, np.ascontiguousarray(b.data))

    def bw(g):
        return kernels.lstm_backward(xd, wxd, whd, hs, cache, np.ascontiguousarray(g))

    return _node(hs, (x, wx, wh, b), bw)


def lstm_step(x_t, h, c, wx, wh, b):
    """One LSTM step from primitive ops; returns (h_next, c_next).

    Slower than lstm_sequence but differentiated op-by-op, so it doubles as
    an independent check on the fused kernels.
    """
    hid = wh.shape[0]
    a = add(add(matmul(x_t, wx), matmul(h, wh)), b)
    i = sigmoid(a[:, :hid])
    f = sigmoid(a[:, hid:2 * hid])
    g = tanh(a[:, 2 * hid:3 * hid])
    o = sigmoid(a[:, 3 * hid:])
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_conv(rng, c_out, c_in, kh, kw):
    rf = kh * kw
    return glorot_uniform(rng, (c_out, c_in, kh, kw), c_in * rf, c_out * rf), np.zeros(c_out)


def init_dense(rng, d_in, d_out):
    return glorot_uniform(rng, (d_in, d_out), d_in, d_out), np.zeros(d_out)


def init_lstm(rng, d_in, hid):
    wx = glorot_uniform(rng, (d_in, 4 * hid), d_in, 4 * hid)
    wh = glorot_uniform(rng, (hid, 4 * hid), hid, 4 * hid)
    b = np.zeros(4 * hid)
    b[hid:2 * hid] = 1.0  # forget gate
    return wx, wh, b
