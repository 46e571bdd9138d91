# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementation of the hot training kernels.

Mirrors mnolearn._kernels_py exactly (same signatures and semantics); see
that module for documentation.  Results agree with the NumPy version to
floating round-off; summation order may differ.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


cdef void _layer(const double[:, :, ::1] w, const double[:, ::1] b,
                 const double[:, ::1] x, const double[:, :, ::1] h_prev,
                 double[:, :, ::1] out, bint from_input, bint relu) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], Q = out.shape[1], O = out.shape[2]
    cdef Py_ssize_t I = w.shape[2]
    cdef Py_ssize_t bi, qi, oi, ii
    cdef double acc
    for bi in range(B):
        for qi in range(Q):
            for oi in range(O):
                acc = b[qi, oi]
                if from_input:
                    for ii in range(I):
                        acc += w[qi, oi, ii] * x[bi, ii]
                else:
                    for ii in range(I):
                        acc += w[qi, oi, ii] * h_prev[bi, qi, ii]
                if relu and acc < 0.0:
                    acc = 0.0
                out[bi, qi, oi] = acc


cdef void _final(const double[:, :, ::1] w, const double[:, ::1] b,
                 const double[:, ::1] x, const double[:, :, ::1] h_prev,
                 double[:, ::1] out, bint from_input) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], Q = out.shape[1]
    cdef Py_ssize_t I = w.shape[2]
    cdef Py_ssize_t bi, qi, ii
    cdef double acc
    for bi in range(B):
        for qi in range(Q):
            acc = b[qi, 0]
            if from_input:
                for ii in range(I):
                    acc += w[qi, 0, ii] * x[bi, ii]
            else:
                for ii in range(I):
                    acc += w[qi, 0, ii] * h_prev[bi, qi, ii]
            out[bi, qi] = acc


def family_forward(ws, bs, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_layers = len(ws)
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t Q = ws[0].shape[0]
    hs = []
    cdef object prev = None
    cdef Py_ssize_t ell
    dummy3 = np.zeros((1, 1, 1))
    for ell in range(n_layers - 1):
        out = np.empty((B, Q, ws[ell].shape[1]))
        _layer(ws[ell], bs[ell], x, dummy3 if prev is None else prev,
               out, prev is None, True)
        hs.append(out)
        prev = out
    final = np.empty((B, Q))
    _final(ws[n_layers - 1], bs[n_layers - 1], x,
           dummy3 if prev is None else prev, final, prev is None)
    return final, hs


def family_backprop(ws, bs, x, hs, up):
    x = np.ascontiguousarray(x, dtype=np.float64)
    up = np.ascontiguousarray(up, dtype=np.float64)
    cdef Py_ssize_t n_layers = len(ws)
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t Q = ws[0].shape[0]
    dws = [np.zeros_like(w) for w in ws]
    dbs = [np.zeros_like(b) for b in bs]

    cdef const double[:, ::1] xv = x
    cdef const double[:, ::1] upv = up
    cdef const double[:, :, ::1] wv = ws[n_layers - 1]
    cdef double[:, :, ::1] dwv = dws[n_layers - 1]
    cdef double[:, ::1] dbv = dbs[n_layers - 1]
    cdef const double[:, :, ::1] hv
    cdef Py_ssize_t bi, qi, oi, ii
    cdef double u, g

    # output layer
    cdef Py_ssize_t I_last = wv.shape[2]
    if n_layers > 1:
        hv = hs[n_layers - 2]
        for bi in range(B):
            for qi in range(Q):
                u = upv[bi, qi]
                dbv[qi, 0] += u
                for ii in range(I_last):
                    dwv[qi, 0, ii] += u * hv[bi, qi, ii]
    else:
        for bi in range(B):
            for qi in range(Q):
                u = upv[bi, qi]
                dbv[qi, 0] += u
                for ii in range(I_last):
                    dwv[qi, 0, ii] += u * xv[bi, ii]
        return dws, dbs

    # delta for the deepest hidden layer
    delta = np.empty((B, Q, I_last))
    cdef double[:, :, ::1] dv = delta
    for bi in range(B):
        for qi in range(Q):
            u = upv[bi, qi]
            for ii in range(I_last):
                dv[bi, qi, ii] = u * wv[qi, 0, ii]

    cdef const double[:, :, ::1] wl
    cdef double[:, :, ::1] dwl
    cdef double[:, ::1] dbl
    cdef const double[:, :, ::1] h_act
    cdef const double[:, :, ::1] h_in
    cdef double[:, :, ::1] nd
    cdef Py_ssize_t ell, O, I
    for ell in range(n_layers - 2, -1, -1):
        wl = ws[ell]
        dwl = dws[ell]
        dbl = dbs[ell]
        h_act = hs[ell]
        O = wl.shape[1]
        I = wl.shape[2]
        if ell > 0:
            h_in = hs[ell - 1]
        new_delta = np.zeros((B, Q, I))
        nd = new_delta
        for bi in range(B):
            for qi in range(Q):
                for oi in range(O):
                    if h_act[bi, qi, oi] <= 0.0:
                        continue
                    g = dv[bi, qi, oi]
                    dbl[qi, oi] += g
                    if ell > 0:
                        for ii in range(I):
                            dwl[qi, oi, ii] += g * h_in[bi, qi, ii]
                            nd[bi, qi, ii] += g * wl[qi, oi, ii]
                    else:
                        for ii in range(I):
                            dwl[qi, oi, ii] += g * xv[bi, ii]
                            nd[bi, qi, ii] += g * wl[qi, oi, ii]
        delta = new_delta
        dv = delta
    return dws, dbs


def mno_contract(theta, lv, bv, tv):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, :, ::1] th = theta
    cdef const double[:, ::1] l = np.ascontiguousarray(lv, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(bv, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(tv, dtype=np.float64)
    cdef Py_ssize_t B = l.shape[0], P = th.shape[0], H = th.shape[1], N = th.shape[2]
    out = np.zeros(B)
    cdef double[::1] o = out
    cdef Py_ssize_t bi, pi, ki, ni
    cdef double acc, inner
    for bi in range(B):
        acc = 0.0
        for pi in range(P):
            for ki in range(H):
                inner = 0.0
                for ni in range(N):
                    inner += th[pi, ki, ni] * t[bi, ni]
                acc += l[bi, pi] * b[bi, ki] * inner
        o[bi] = acc
    return out


def mno_theta_grad(g, lv, bv, tv):
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, ::1] l = np.ascontiguousarray(lv, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(bv, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(tv, dtype=np.float64)
    cdef Py_ssize_t B = l.shape[0], P = l.shape[1], H = b.shape[1], N = t.shape[1]
    dtheta = np.zeros((P, H, N))
    cdef double[:, :, ::1] d = dtheta
    cdef Py_ssize_t bi, pi, ki, ni
    cdef double coef
    for bi in range(B):
        for pi in range(P):
            for ki in range(H):
                coef = gv[bi] * l[bi, pi] * b[bi, ki]
                for ni in range(N):
                    d[pi, ki, ni] += coef * t[bi, ni]
    return dtheta


def mno_upstreams(theta, g, lv, bv, tv):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, :, ::1] th = theta
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, ::1] l = np.ascontiguousarray(lv, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(bv, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(tv, dtype=np.float64)
    cdef Py_ssize_t B = l.shape[0], P = th.shape[0], H = th.shape[1], N = th.shape[2]
    ul = np.zeros((B, P))
    ub = np.zeros((B, H))
    ut = np.zeros((B, N))
    cdef double[:, ::1] ulv = ul
    cdef double[:, ::1] ubv = ub
    cdef double[:, ::1] utv = ut
    cdef Py_ssize_t bi, pi, ki, ni
    cdef double gb, lp, bk, coef, acc
    for bi in range(B):
        gb = gv[bi]
        for pi in range(P):
            lp = l[bi, pi]
            for ki in range(H):
                bk = b[bi, ki]
                coef = gb * lp * bk
                acc = 0.0
                for ni in range(N):
                    acc += th[pi, ki, ni] * t[bi, ni]
                    utv[bi, ni] += coef * th[pi, ki, ni]
                ulv[bi, pi] += gb * bk * acc
                ubv[bi, ki] += gb * lp * acc
    return ul, ub, ut
