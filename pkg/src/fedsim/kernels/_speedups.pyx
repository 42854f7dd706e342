# cython: boundscheck=False, wraparound=False, initializedcheck=False
# cython: cdivision=True, language_level=3
"""Compiled local-SGD inner loops.

Mirror of ``pure.py``: every expression and its evaluation order must match
that file exactly so the two backends stay bit-identical (build uses
-ffp-contract=off to keep fused multiply-adds from breaking this).  Keep the
two files in lockstep when editing.
"""

import numpy as np

from libc.math cimport exp, tanh, isfinite
from libc.stdint cimport int64_t


cdef inline bint _finite(double[::1] w, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(d):
        if not isfinite(w[j]):
            return False
    return True


cdef inline double _sigmoid(double m) noexcept nogil:
    cdef double e
    if m >= 0.0:
        return 1.0 / (1.0 + exp(-m))
    e = exp(m)
    return e / (1.0 + e)


def sgd_quadratic_diag(w, a, b, double gamma, Py_ssize_t steps):
    w_out = np.array(w, dtype=np.float64)
    cdef double[::1] wl = w_out
    cdef const double[::1] al = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bl = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t d = wl.shape[0]
    cdef Py_ssize_t step, j
    for step in range(steps):
        for j in range(d):
            wl[j] -= gamma * (al[j] * wl[j] - bl[j])
        if not _finite(wl, d):
            return w_out, step
    return w_out, -1


def sgd_quadratic_dense(w, a, b, double gamma, Py_ssize_t steps):
    w_out = np.array(w, dtype=np.float64)
    cdef double[::1] wl = w_out
    cdef const double[:, ::1] al = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bl = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t d = wl.shape[0]
    cdef double[::1] g = np.zeros(d)
    cdef Py_ssize_t step, j, m
    cdef double acc
    for step in range(steps):
        for j in range(d):
            acc = 0.0
            for m in range(d):
                acc += al[j, m] * wl[m]
            g[j] = acc - bl[j]
        for j in range(d):
            wl[j] -= gamma * g[j]
        if not _finite(wl, d):
            return w_out, step
    return w_out, -1


def sgd_least_squares(w, x, y, idx, double gamma, Py_ssize_t steps, Py_ssize_t batch):
    w_out = np.array(w, dtype=np.float64)
    cdef double[::1] wl = w_out
    cdef const double[:, ::1] xl = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yl = np.ascontiguousarray(y, dtype=np.float64)
    cdef const int64_t[::1] il = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t d = wl.shape[0]
    cdef double bf = <double> batch
    cdef double[::1] g = np.zeros(d)
    cdef Py_ssize_t step, j, p, row
    cdef double z, r
    for step in range(steps):
        for j in range(d):
            g[j] = 0.0
        for p in range(step * batch, (step + 1) * batch):
            row = <Py_ssize_t> il[p]
            z = 0.0
            for j in range(d):
                z += xl[row, j] * wl[j]
            r = z - yl[row]
            for j in range(d):
                g[j] += r * xl[row, j]
        for j in range(d):
            wl[j] -= gamma * (g[j] / bf)
        if not _finite(wl, d):
            return w_out, step
    return w_out, -1


def sgd_logistic(w, x, y, idx, double gamma, Py_ssize_t steps, Py_ssize_t batch):
    w_out = np.array(w, dtype=np.float64)
    cdef double[::1] wl = w_out
    cdef const double[:, ::1] xl = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yl = np.ascontiguousarray(y, dtype=np.float64)
    cdef const int64_t[::1] il = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t d = wl.shape[0]
    cdef double bf = <double> batch
    cdef double[::1] g = np.zeros(d)
    cdef Py_ssize_t step, j, p, row
    cdef double z, c
    for step in range(steps):
        for j in range(d):
            g[j] = 0.0
        for p in range(step * batch, (step + 1) * batch):
            row = <Py_ssize_t> il[p]
            z = 0.0
            for j in range(d):
                z += xl[row, j] * wl[j]
            c = -yl[row] * _sigmoid(-yl[row] * z)
            for j in range(d):
                g[j] += c * xl[row, j]
        for j in range(d):
            wl[j] -= gamma * (g[j] / bf)
        if not _finite(wl, d):
            return w_out, step
    return w_out, -1


def sgd_mlp1(w, x, y, idx, double gamma, Py_ssize_t steps, Py_ssize_t batch,
             Py_ssize_t n_in, Py_ssize_t n_hidden):
    w_out = np.array(w, dtype=np.float64)
    cdef double[::1] wl = w_out
    cdef const double[:, ::1] xl = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yl = np.ascontiguousarray(y, dtype=np.float64)
    cdef const int64_t[::1] il = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t dim = wl.shape[0]
    cdef double bf = <double> batch
    cdef Py_ssize_t off_b1 = n_hidden * n_in
    cdef Py_ssize_t off_w2 = off_b1 + n_hidden
    cdef Py_ssize_t off_b2 = off_w2 + n_hidden
    cdef double[::1] g = np.zeros(dim)
    cdef double[::1] t = np.zeros(n_hidden)
    cdef Py_ssize_t step, j, p, u, row, base
    cdef double acc, pred, e, dl
    for step in range(steps):
        for j in range(dim):
            g[j] = 0.0
        for p in range(step * batch, (step + 1) * batch):
            row = <Py_ssize_t> il[p]
            for u in range(n_hidden):
                acc = wl[off_b1 + u]
                base = u * n_in
                for j in range(n_in):
                    acc += wl[base + j] * xl[row, j]
                t[u] = tanh(acc)
            pred = wl[off_b2]
            for u in range(n_hidden):
                pred += wl[off_w2 + u] * t[u]
            e = pred - yl[row]
            for u in range(n_hidden):
                dl = e * wl[off_w2 + u] * (1.0 - t[u] * t[u])
                base = u * n_in
                for j in range(n_in):
                    g[base + j] += dl * xl[row, j]
                g[off_b1 + u] += dl
                g[off_w2 + u] += e * t[u]
            g[off_b2] += e
        for j in range(dim):
            wl[j] -= gamma * (g[j] / bf)
        if not _finite(wl, dim):
            return w_out, step
    return w_out, -1
