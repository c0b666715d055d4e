"""Pure-numpy reference kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
semantics. Convolutions are "valid" over an input the caller already padded.
LSTM gate layout along the last axis is (input, forget, cell, output).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(xp, w, b, sh, sw):
    """xp (N,C,Hp,Wp), w (O,C,kh,kw), b (O,) -> (N,O,Ho,Wo)."""
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    y = y.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward(xp, w, gy, sh, sw):
    """Gradients of conv2d_forward w.r.t. (xp, w, b) given upstream gy."""
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = gy.shape[2], gy.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = gy.sum(axis=(0, 2, 3))
    gx = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gy, w[:, :, i, j], axes=([1], [0]))  # (N,Ho,Wo,C)
            gx[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += contrib.transpose(0, 3, 1, 2)
    return gx, gw, gb


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def lstm_forward(x, wx, wh, b):
    """x (N,T,D) -> hidden states (N,T,H) plus a cache for lstm_backward.

    Initial hidden and cell states are zero.
    """
    n, t_len, _ = x.shape
    hid = wh.shape[0]
    xw = x @ wx + b
    gates = np.empty((n, t_len, 4 * hid))
    cells = np.empty((n, t_len, hid))
    hs = np.empty((n, t_len, hid))
    h = np.zeros((n, hid))
    c = np.zeros((n, hid))
    for t in range(t_len):
        a = xw[:, t] + h @ wh
        g = gates[:, t]
        g[:, :2 * hid] = _sigmoid(a[:, :2 * hid])
        g[:, 2 * hid:3 * hid] = np.tanh(a[:, 2 * hid:3 * hid])
        g[:, 3 * hid:] = _sigmoid(a[:, 3 * hid:])
        c = g[:, hid:2 * hid] * c + g[:, :hid] * g[:, 2 * hid:3 * hid]
        h = g[:, 3 * hid:] * np.tanh(c)
        cells[:, t] = c
        hs[:, t] = h
    return hs, (gates, cells)


def lstm_backward(x, wx, wh, hs, cache, ghs):
    """BPTT for lstm_forward; returns (gx, gwx, gwh, gb)."""
    gates, cells = cache
    n, t_len, _ = x.shape
    hid = wh.shape[0]
    da_all = np.empty((n, t_len, 4 * hid))
    dh_next = np.zeros((n, hid))
    dc_next = np.zeros((n, hid))
    for t in range(t_len - 1, -1, -1):
        g = gates[:, t]
        i, f, gg, o = g[:, :hid], g[:, hid:2 * hid], g[:, 2 * hid:3 * hid], g[:, 3 * hid:]
        c = cells[:, t]
        c_prev = cells[:, t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = ghs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = da_all[:, t]
        da[:, :hid] = dc * gg * i * (1.0 - i)
        da[:, hid:2 * hid] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * hid:3 * hid] = dc * i * (1.0 - gg * gg)
        da[:, 3 * hid:] = dh * tc * o * (1.0 - o)
        dh_next = da @ wh.T
        dc_next = dc * f
    gx = da_all @ wx.T
    gwx = np.tensordot(x, da_all, axes=([0, 1], [0, 1]))
    h_prev = np.concatenate([np.zeros((n, 1, hid)), hs[:, :-1]], axis=1)
    gwh = np.tensordot(h_prev, da_all, axes=([0, 1], [0, 1]))
    gb = da_all.sum(axis=(0, 1))
    return gx, gwx, gwh, gb
