# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping kernels for the coupled leapfrog scheme.

Mirrors :mod:`coupledwave._pykernels` operation for operation; see there for
the meaning of the arguments.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite

cnp.import_array()


cdef inline void _accel(const double[::1] lower, const double[::1] diag, const double[::1] upper,
                        const double[::1] c11, const double[::1] c12,
                        const double[::1] c21, const double[::1] c22,
                        const double[::1] y1, const double[::1] y2,
                        double[::1] acc1, double[::1] acc2, Py_ssize_t n) nogil:
    cdef Py_ssize_t i
    cdef double d1, d2
    for i in range(n):
        d1 = diag[i] * y1[i]
        d2 = diag[i] * y2[i]
        if i > 0:
            d1 = d1 + lower[i] * y1[i - 1]
            d2 = d2 + lower[i] * y2[i - 1]
        if i < n - 1:
            d1 = d1 + upper[i] * y1[i + 1]
            d2 = d2 + upper[i] * y2[i + 1]
        acc1[i] = d1 - (c11[i] * y1[i] + c12[i] * y2[i])
        acc2[i] = d2 - (c21[i] * y1[i] + c22[i] * y2[i])


def leapfrog(const double[::1] lower, const double[::1] diag, const double[::1] upper,
             const double[::1] c11, const double[::1] c12, const double[::1] c21, const double[::1] c22,
             const double[::1] y10, const double[::1] y20, const double[::1] v10, const double[::1] v20,
             double dt, Py_ssize_t nsteps):
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t k, i
    cdef double dt2 = dt * dt
    cdef double half = 0.5 * dt2
    cdef double total
    out_arr = np.empty((nsteps + 1, 2, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] acc1 = np.empty(n)
    cdef double[::1] acc2 = np.empty(n)
    cdef int failed = -1

    for i in range(n):
        out[0, 0, i] = y10[i]
        out[0, 1, i] = y20[i]
    if nsteps == 0:
        return out_arr, failed

    with nogil:
        _accel(lower, diag, upper, c11, c12, c21, c22, out[0, 0], out[0, 1], acc1, acc2, n)
        total = 0.0
        for i in range(n):
            out[1, 0, i] = (y10[i] + dt * v10[i]) + half * acc1[i]
            out[1, 1, i] = (y20[i] + dt * v20[i]) + half * acc2[i]
            total = total + fabs(out[1, 0, i]) + fabs(out[1, 1, i])
        if not isfinite(total):
            failed = 1
        else:
            for k in range(1, nsteps):
                _accel(lower, diag, upper, c11, c12, c21, c22, out[k, 0], out[k, 1], acc1, acc2, n)
                total = 0.0
                for i in range(n):
                    out[k + 1, 0, i] = (2.0 * out[k, 0, i] - out[k - 1, 0, i]) + dt2 * acc1[i]
                    out[k + 1, 1, i] = (2.0 * out[k, 1, i] - out[k - 1, 1, i]) + dt2 * acc2[i]
                    total = total + fabs(out[k + 1, 0, i]) + fabs(out[k + 1, 1, i])
                if not isfinite(total):
                    failed = k + 1
                    break
    return out_arr, failed


def leapfrog_adjoint(const double[::1] lower_t, const double[::1] diag, const double[::1] upper_t,
                     const double[::1] c11, const double[::1] c12_t, const double[::1] c21_t, const double[::1] c22,
                     const double[:, :, ::1] Y, const double[:, :, ::1] G, double dt):
    cdef Py_ssize_t nt = Y.shape[0]
    cdef Py_ssize_t n = Y.shape[2]
    cdef Py_ssize_t k, i
    cdef double dt2 = dt * dt
    cdef double half = 0.5 * dt2
    bar_arr = np.array(G, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] bar = bar_arr
    g11_arr = np.zeros(n)
    g22_arr = np.zeros(n)
    cdef double[::1] g11 = g11_arr
    cdef double[::1] g22 = g22_arr
    cdef double[::1] acc1 = np.empty(n)
    cdef double[::1] acc2 = np.empty(n)

    if nt < 2:
        return g11_arr, g22_arr
    with nogil:
        for k in range(nt - 2, 0, -1):
            _accel(lower_t, diag, upper_t, c11, c12_t, c21_t, c22,
                   bar[k + 1, 0], bar[k + 1, 1], acc1, acc2, n)
            for i in range(n):
                bar[k, 0, i] = bar[k, 0, i] + (2.0 * bar[k + 1, 0, i] + dt2 * acc1[i])
                bar[k, 1, i] = bar[k, 1, i] + (2.0 * bar[k + 1, 1, i] + dt2 * acc2[i])
                bar[k - 1, 0, i] = bar[k - 1, 0, i] - bar[k + 1, 0, i]
                bar[k - 1, 1, i] = bar[k - 1, 1, i] - bar[k + 1, 1, i]
                g11[i] = g11[i] - dt2 * (Y[k, 0, i] * bar[k + 1, 0, i])
                g22[i] = g22[i] - dt2 * (Y[k, 1, i] * bar[k + 1, 1, i])
        for i in range(n):
            g11[i] = g11[i] - half * (Y[0, 0, i] * bar[1, 0, i])
            g22[i] = g22[i] - half * (Y[0, 1, i] * bar[1, 1, i])
    return g11_arr, g22_arr
