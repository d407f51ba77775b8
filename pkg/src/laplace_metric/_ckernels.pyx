# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pair kernels. Same contracts as ``_kernels_py``."""

import numpy as np
from libc.math cimport sqrt


cdef void _norms(const double[:, ::1] E, double[::1] r) noexcept nogil:
    cdef Py_ssize_t n, k
    cdef double s
    for n in range(E.shape[0]):
        s = 0.0
        for k in range(E.shape[1]):
            s += E[n, k] * E[n, k]
        r[n] = sqrt(s)


def pair_loss(E, I, Jx, w, bint arccos):
    cdef const double[:, ::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef const long long[::1] ii = np.ascontiguousarray(I, dtype=np.int64)
    cdef const long long[::1] jj = np.ascontiguousarray(Jx, dtype=np.int64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t b, k, i, j
    cdef Py_ssize_t d = e.shape[1]
    cdef double total = 0.0, acc, t
    cdef double[::1] r = np.empty(e.shape[0])
    with nogil:
        if arccos:
            _norms(e, r)
        for b in range(ii.shape[0]):
            if ww[b] == 0.0:
                continue
            i = ii[b]
            j = jj[b]
            acc = 0.0
            if arccos:
                for k in range(d):
                    acc += e[i, k] * e[j, k]
                total += ww[b] * (1.0 - acc / (r[i] * r[j]))
            else:
                for k in range(d):
                    t = e[i, k] - e[j, k]
                    acc += t * t
                total += ww[b] * 0.5 * acc
    return total


def pair_output_grad(E, I, Jx, w, bint arccos):
    cdef const double[:, ::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef const long long[::1] ii = np.ascontiguousarray(I, dtype=np.int64)
    cdef const long long[::1] jj = np.ascontiguousarray(Jx, dtype=np.int64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    G_arr = np.zeros((e.shape[0], e.shape[1]))
    cdef double[:, ::1] G = G_arr
    cdef double[::1] r = np.empty(e.shape[0])
    cdef Py_ssize_t b, k, i, j
    cdef Py_ssize_t d = e.shape[1]
    cdef double c, t, ai, bj
    with nogil:
        if arccos:
            _norms(e, r)
        for b in range(ii.shape[0]):
            if ww[b] == 0.0:
                continue
            i = ii[b]
            j = jj[b]
            if arccos:
                c = 0.0
                for k in range(d):
                    c += e[i, k] * e[j, k]
                c = c / (r[i] * r[j])
                for k in range(d):
                    ai = e[i, k] / r[i]
                    bj = e[j, k] / r[j]
                    G[i, k] -= ww[b] * (bj - c * ai) / r[i]
                    G[j, k] -= ww[b] * (ai - c * bj) / r[j]
            else:
                for k in range(d):
                    t = ww[b] * (e[i, k] - e[j, k])
                    G[i, k] += t
                    G[j, k] -= t
    return G_arr


def pair_ggn_diag(E, J, I, Jx, w, bint arccos, bint cross):
    cdef const double[:, ::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef const double[:, :, ::1] jac = np.ascontiguousarray(J, dtype=np.float64)
    cdef const long long[::1] ii = np.ascontiguousarray(I, dtype=np.int64)
    cdef const long long[::1] jj = np.ascontiguousarray(Jx, dtype=np.int64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t d = e.shape[1]
    cdef Py_ssize_t P = jac.shape[2]
    out_arr = np.zeros(P)
    cdef double[::1] out = out_arr
    cdef double[::1] r = np.empty(e.shape[0])
    cdef double[:, ::1] H11 = np.empty((d, d))
    cdef double[:, ::1] H12 = np.empty((d, d))
    cdef double[:, ::1] H22 = np.empty((d, d))
    cdef double[::1] a = np.empty(d)
    cdef double[::1] bv = np.empty(d)
    cdef Py_ssize_t b, k, l, p, i, j
    cdef double wb, c, t, h, eye, s11, s22, s12
    with nogil:
        if arccos:
            _norms(e, r)
        for b in range(ii.shape[0]):
            wb = ww[b]
            if wb == 0.0:
                continue
            i = ii[b]
            j = jj[b]
            if not arccos:
                for k in range(d):
                    for p in range(P):
                        if cross:
                            t = jac[i, k, p] - jac[j, k, p]
                            out[p] += wb * t * t
                        else:
                            out[p] += wb * (jac[i, k, p] * jac[i, k, p] + jac[j, k, p] * jac[j, k, p])
                continue
            c = 0.0
            for k in range(d):
                a[k] = e[i, k] / r[i]
                bv[k] = e[j, k] / r[j]
                c += a[k] * bv[k]
            s11 = 1.0 / (r[i] * r[i])
            s22 = 1.0 / (r[j] * r[j])
            s12 = 1.0 / (r[i] * r[j])
            for k in range(d):
                for l in range(d):
                    eye = 1.0 if k == l else 0.0
                    H11[k, l] = s11 * (c * eye + a[k] * bv[l] + bv[k] * a[l] - 3.0 * c * a[k] * a[l])
                    H22[k, l] = s22 * (c * eye + a[k] * bv[l] + bv[k] * a[l] - 3.0 * c * bv[k] * bv[l])
                    H12[k, l] = s12 * (-eye + a[k] * a[l] + bv[k] * bv[l] - c * a[k] * bv[l])
            for k in range(d):
                for l in range(d):
                    h = wb * H11[k, l]
                    for p in range(P):
                        out[p] += h * jac[i, k, p] * jac[i, l, p]
                    h = wb * H22[k, l]
                    for p in range(P):
                        out[p] += h * jac[j, k, p] * jac[j, l, p]
                    if cross:
                        h = 2.0 * wb * H12[k, l]
                        for p in range(P):
                            out[p] += h * jac[i, k, p] * jac[j, l, p]
    return out_arr
