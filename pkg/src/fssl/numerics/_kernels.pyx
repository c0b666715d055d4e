# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv2d / LSTM kernels; drop-in twins of ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double a) nogil:
    return 0.5 * (1.0 + tanh(0.5 * a))


cdef void _gemm(const double[:, ::1] a, const double[:, ::1] b, double[:, ::1] c,
                double alpha, double beta, bint ta, bint tb) noexcept nogil:
    # row-major C = alpha * op(A) @ op(B) + beta * C via column-major dgemm on transposes
    cdef int m = c.shape[0]
    cdef int n = c.shape[1]
    cdef int k = a.shape[0] if ta else a.shape[1]
    cdef int lda = a.shape[1]
    cdef int ldb = b.shape[1]
    cdef int ldc = c.shape[1]
    cdef char transa = b't' if tb else b'n'
    cdef char transb = b't' if ta else b'n'
    if m == 0 or n == 0:
        return
    dgemm(&transa, &transb, &n, &m, &k, &alpha, <double*>&b[0, 0], &ldb,
          <double*>&a[0, 0], &lda, &beta, &c[0, 0], &ldc)


cdef void _im2col(const double[:, :, :, ::1] xp, Py_ssize_t n, Py_ssize_t kh, Py_ssize_t kw,
                  int sh, int sw, Py_ssize_t ho, Py_ssize_t wo, double[:, ::1] cols) noexcept nogil:
    # cols[(c, r, s), (i, j)] = xp[n, c, i*sh + r, j*sw + s]
    cdef Py_ssize_t c, r, s, i, j, row
    for c in range(xp.shape[1]):
        for r in range(kh):
            for s in range(kw):
                row = (c * kh + r) * kw + s
                for i in range(ho):
                    for j in range(wo):
                        cols[row, i * wo + j] = xp[n, c, i * sh + r, j * sw + s]


def conv2d_forward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, const double[::1] b, int sh, int sw):
    cdef Py_ssize_t n_b = xp.shape[0], c_in = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1, wo = (wp - kw) // sw + 1
    cdef Py_ssize_t k = c_in * kh * kw, p = ho * wo
    out = np.empty((n_b, c_out, ho, wo))
    cdef double[:, :, ::1] y = out.reshape(n_b, c_out, p)
    cdef const double[:, ::1] wm = np.asarray(w).reshape(c_out, k)
    cdef double[:, ::1] cols = np.empty((k, p))
    cdef double[:, ::1] yn
    cdef Py_ssize_t n, o, q
    for n in range(n_b):
        yn = y[n]
        with nogil:
            _im2col(xp, n, kh, kw, sh, sw, ho, wo, cols)
            for o in range(c_out):
                for q in range(p):
                    yn[o, q] = b[o]
            _gemm(wm, cols, yn, 1.0, 1.0, False, False)
    return out


def conv2d_backward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, const double[:, :, :, ::1] gy, int sh, int sw):
    cdef Py_ssize_t n_b = xp.shape[0], c_in = xp.shape[1]
    cdef Py_ssize_t c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t k = c_in * kh * kw, p = ho * wo
    gx_arr = np.zeros_like(np.asarray(xp))
    gw_arr = np.zeros((c_out, k))
    gb_arr = np.zeros(c_out)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef const double[:, :, ::1] g3 = np.asarray(gy).reshape(n_b, c_out, p)
    cdef const double[:, ::1] wm = np.asarray(w).reshape(c_out, k)
    cdef double[:, ::1] cols = np.empty((k, p))
    cdef double[:, ::1] gcols = np.empty((k, p))
    cdef const double[:, ::1] gn
    cdef Py_ssize_t n, o, q, c, r, s, i, j, row
    for n in range(n_b):
        gn = g3[n]
        with nogil:
            for o in range(c_out):
                for q in range(p):
                    gb[o] += gn[o, q]
            _im2col(xp, n, kh, kw, sh, sw, ho, wo, cols)
            _gemm(gn, cols, gw, 1.0, 1.0, False, True)
            _gemm(wm, gn, gcols, 1.0, 0.0, True, False)
            for c in range(c_in):
                for r in range(kh):
                    for s in range(kw):
                        row = (c * kh + r) * kw + s
                        for i in range(ho):
                            for j in range(wo):
                                gx[n, c, i * sh + r, j * sw + s] += gcols[row, i * wo + j]
    return gx_arr, gw_arr.reshape(np.asarray(w).shape), gb_arr


def lstm_forward(const double[:, :, ::1] x, const double[:, ::1] wx, const double[:, ::1] wh, const double[::1] b):
    cdef Py_ssize_t n_b = x.shape[0], t_len = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t hid = wh.shape[0]
    cdef Py_ssize_t n, t, k
    gates_arr = np.empty((n_b, t_len, 4 * hid))
    cells_arr = np.empty((n_b, t_len, hid))
    hs_arr = np.empty((n_b, t_len, hid))
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, :, ::1] cells = cells_arr
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, ::1] a = np.empty((n_b, 4 * hid))
    cdef double[:, ::1] h = np.zeros((n_b, hid))
    cdef double[:, ::1] c = np.zeros((n_b, hid))
    cdef double[:, ::1] xt = np.empty((n_b, d))
    cdef double ig, fg, gg, og
    with nogil:
        for t in range(t_len):
            for n in range(n_b):
                for k in range(d):
                    xt[n, k] = x[n, t, k]
                for k in range(4 * hid):
                    a[n, k] = b[k]
            _gemm(xt, wx, a, 1.0, 1.0, False, False)
            _gemm(h, wh, a, 1.0, 1.0, False, False)
            for n in range(n_b):
                for k in range(hid):
                    ig = _sig(a[n, k])
                    fg = _sig(a[n, hid + k])
                    gg = tanh(a[n, 2 * hid + k])
                    og = _sig(a[n, 3 * hid + k])
                    gates[n, t, k] = ig
                    gates[n, t, hid + k] = fg
                    gates[n, t, 2 * hid + k] = gg
                    gates[n, t, 3 * hid + k] = og
                    c[n, k] = fg * c[n, k] + ig * gg
                    h[n, k] = og * tanh(c[n, k])
                    cells[n, t, k] = c[n, k]
                    hs[n, t, k] = h[n, k]
    return hs_arr, (gates_arr, cells_arr)


def lstm_backward(const double[:, :, ::1] x, const double[:, ::1] wx, const double[:, ::1] wh,
                  const double[:, :, ::1] hs, cache, const double[:, :, ::1] ghs):
    cdef const double[:, :, ::1] gates = cache[0]
    cdef const double[:, :, ::1] cells = cache[1]
    cdef Py_ssize_t n_b = x.shape[0], t_len = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t hid = wh.shape[0]
    cdef Py_ssize_t n, t, k
    gx_arr = np.empty((n_b, t_len, d))
    gwx_arr = np.zeros((d, 4 * hid))
    gwh_arr = np.zeros((hid, 4 * hid))
    gb_arr = np.zeros(4 * hid)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] gwx = gwx_arr
    cdef double[:, ::1] gwh = gwh_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] da = np.empty((n_b, 4 * hid))
    cdef double[:, ::1] dh_next = np.zeros((n_b, hid))
    cdef double[:, ::1] dc_next = np.zeros((n_b, hid))
    cdef double[:, ::1] xt = np.empty((n_b, d))
    cdef double[:, ::1] hprev = np.empty((n_b, hid))
    cdef double[:, ::1] gxt = np.empty((n_b, d))
    cdef double ig, fg, gg, og, cv, cp, tc, dh, dc
    with nogil:
        for t in range(t_len - 1, -1, -1):
            for n in range(n_b):
                for k in range(hid):
                    ig = gates[n, t, k]
                    fg = gates[n, t, hid + k]
                    gg = gates[n, t, 2 * hid + k]
                    og = gates[n, t, 3 * hid + k]
                    cv = cells[n, t, k]
                    cp = cells[n, t - 1, k] if t > 0 else 0.0
                    tc = tanh(cv)
                    dh = ghs[n, t, k] + dh_next[n, k]
                    dc = dc_next[n, k] + dh * og * (1.0 - tc * tc)
                    da[n, k] = dc * gg * ig * (1.0 - ig)
                    da[n, hid + k] = dc * cp * fg * (1.0 - fg)
                    da[n, 2 * hid + k] = dc * ig * (1.0 - gg * gg)
                    da[n, 3 * hid + k] = dh * tc * og * (1.0 - og)
                    dc_next[n, k] = dc * fg
                for k in range(d):
                    xt[n, k] = x[n, t, k]
                for k in range(hid):
                    hprev[n, k] = hs[n, t - 1, k] if t > 0 else 0.0
                for k in range(4 * hid):
                    gb[k] += da[n, k]
            _gemm(da, wh, dh_next, 1.0, 0.0, False, True)
            _gemm(da, wx, gxt, 1.0, 0.0, False, True)
            _gemm(xt, da, gwx, 1.0, 1.0, True, False)
            _gemm(hprev, da, gwh, 1.0, 1.0, True, False)
            for n in range(n_b):
                for k in range(d):
                    gx[n, t, k] = gxt[n, k]
    return gx_arr, gwx_arr, gwh_arr, gb_arr
