# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels (hot path).

Same contracts as the reference module; see its docstring for the scheme.
All exponential tables are precomputed by the caller so both backends share
identical coefficients; the loops here use only +, *, sqrt and tanh.
"""

import numpy as np

from libc.math cimport sqrt, tanh, isfinite

BACKEND_NAME = "native"


cdef inline double _pair1(int kind, double ax, double ay,
                          double xk, double yk) nogil:
    if kind == 0:
        return 0.0
    if kind == 1:
        return ax * xk + ay * yk
    return ax * tanh(xk) + ay * tanh(yk)


cdef inline void _burgers(const double[:, ::1] emat, const double[:, ::1] dmat,
                          const double* x, double* out, double* phys,
                          double proj_scale,
                          Py_ssize_t m, Py_ssize_t n) nogil:
    cdef Py_ssize_t j, k
    cdef double sx, sd
    for j in range(m):
        sx = 0.0
        sd = 0.0
        for k in range(n):
            sx += emat[j, k] * x[k]
            sd += dmat[j, k] * x[k]
        phys[j] = sx * sd
    for k in range(n):
        sx = 0.0
        for j in range(m):
            sx += emat[j, k] * phys[j]
        out[k] = sx * proj_scale


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(n):
        s += a[k] * b[k]
    return s


def run_coupled(double[:, ::1] out_x, double[:, ::1] out_y,
                double[::1] out_absx2, double[::1] out_normx2,
                double[::1] lam,
                double[::1] a_slow, double[::1] w_slow,
                double[::1] conv_slow, double[::1] cw_slow,
                double[::1] a_fast, double[::1] w_fast,
                double[::1] conv_fast, double[::1] cw_fast,
                int f_kind, double f_ax, double f_ay,
                int g_kind, double g_ax, double g_ay,
                double s1_c0, double s1_cx,
                double s2_c0, double s2_cx, double s2_cy,
                double[:, ::1] u, double[:, :, ::1] xi,
                double[:, ::1] emat, double[:, ::1] dmat, double proj_scale):
    cdef Py_ssize_t n_steps = xi.shape[0]
    cdef Py_ssize_t n_sub = xi.shape[1]
    cdef Py_ssize_t n = xi.shape[2]
    cdef Py_ssize_t m = emat.shape[0]
    work = np.empty(5 * n + m, dtype=np.float64)
    cdef double[::1] wv = work
    cdef double* x = &wv[0]
    cdef double* y = &wv[n]
    cdef double* xn = &wv[2 * n]
    cdef double* bx = &wv[3 * n]
    cdef double* zeta = &wv[4 * n]
    cdef double* phys = &wv[5 * n]
    cdef double inv_sqrt_nsub = 1.0 / sqrt(<double> n_sub)
    cdef Py_ssize_t i, j, k
    cdef double s1v, s2v, tx, absx2, normx2, s, ay2
    cdef int bad = -1

    with nogil:
        absx2 = 0.0
        normx2 = 0.0
        for k in range(n):
            x[k] = out_x[0, k]
            y[k] = out_y[0, k]
            absx2 += x[k] * x[k]
            normx2 += lam[k] * x[k] * x[k]
        out_absx2[0] = absx2
        out_normx2[0] = normx2
        for i in range(n_steps):
            s1v = s1_c0 + s1_cx * tanh(sqrt(out_absx2[i]))
            tx = s2_cx * tanh(sqrt(out_absx2[i]))
            _burgers(emat, dmat, x, bx, phys, proj_scale, m, n)
            for k in range(n):
                s = 0.0
                for j in range(n_sub):
                    s += xi[i, j, k]
                zeta[k] = s * inv_sqrt_nsub
            for k in range(n):
                xn[k] = a_slow[k] * x[k] \
                    + w_slow[k] * (bx[k] + _pair1(f_kind, f_ax, f_ay, x[k], y[k])) \
                    + s1v * (cw_slow[k] * u[i, k] + conv_slow[k] * zeta[k])
            for j in range(n_sub):
                ay2 = _dot(y, y, n)
                s2v = s2_c0 + tx + s2_cy * tanh(sqrt(ay2))
                for k in range(n):
                    y[k] = a_fast[k] * y[k] \
                        + w_fast[k] * _pair1(g_kind, g_ax, g_ay, x[k], y[k]) \
                        + s2v * (cw_fast[k] * u[i, k] + conv_fast[k] * xi[i, j, k])
            absx2 = 0.0
            normx2 = 0.0
            for k in range(n):
                x[k] = xn[k]
                out_x[i + 1, k] = x[k]
                out_y[i + 1, k] = y[k]
                absx2 += x[k] * x[k]
                normx2 += lam[k] * x[k] * x[k]
            out_absx2[i + 1] = absx2
            out_normx2[i + 1] = normx2
            if not (isfinite(absx2) and isfinite(_dot(y, y, n))):
                bad = <int> (i + 1)
                break
    return bad


def run_auxiliary(double[:, ::1] out_x, double[:, ::1] out_y,
                  double[::1] out_absx2, double[::1] out_normx2,
                  double[::1] lam,
                  double[::1] a_slow, double[::1] w_slow, double[::1] cw_slow,
                  double[::1] a_fast, double[::1] w_fast, double[::1] conv_fast,
                  int f_kind, double f_ax, double f_ay,
                  int g_kind, double g_ax, double g_ay,
                  double s1_c0, double s1_cx,
                  double s2_c0, double s2_cx, double s2_cy,
                  double[:, ::1] u, double[:, :, ::1] xi,
                  double[:, ::1] x_ctrl, Py_ssize_t block_steps,
                  double[:, ::1] emat, double[:, ::1] dmat, double proj_scale):
    cdef Py_ssize_t n_steps = xi.shape[0]
    cdef Py_ssize_t n_sub = xi.shape[1]
    cdef Py_ssize_t n = xi.shape[2]
    cdef Py_ssize_t m = emat.shape[0]
    work = np.empty(4 * n + m, dtype=np.float64)
    cdef double[::1] wv = work
    cdef double* x = &wv[0]
    cdef double* y = &wv[n]
    cdef double* xn = &wv[2 * n]
    cdef double* bx = &wv[3 * n]
    cdef double* phys = &wv[4 * n]
    cdef Py_ssize_t i, j, k, ib
    cdef double s1v, s2v, tx, absx2, normx2, xbk
    cdef int bad = -1

    with nogil:
        absx2 = 0.0
        normx2 = 0.0
        for k in range(n):
            x[k] = out_x[0, k]
            y[k] = out_y[0, k]
            absx2 += x[k] * x[k]
            normx2 += lam[k] * x[k] * x[k]
        out_absx2[0] = absx2
        out_normx2[0] = normx2
        for i in range(n_steps):
            ib = (i // block_steps) * block_steps
            s1v = s1_c0 + s1_cx * tanh(sqrt(out_absx2[i]))
            tx = s2_cx * tanh(sqrt(_dot(&x_ctrl[ib, 0], &x_ctrl[ib, 0], n)))
            _burgers(emat, dmat, x, bx, phys, proj_scale, m, n)
            for k in range(n):
                xbk = x_ctrl[ib, k]
                xn[k] = a_slow[k] * x[k] \
                    + w_slow[k] * (bx[k] + _pair1(f_kind, f_ax, f_ay, xbk, y[k])) \
                    + s1v * (cw_slow[k] * u[i, k])
            for j in range(n_sub):
                s2v = s2_c0 + tx + s2_cy * tanh(sqrt(_dot(y, y, n)))
                for k in range(n):
                    y[k] = a_fast[k] * y[k] \
                        + w_fast[k] * _pair1(g_kind, g_ax, g_ay, x_ctrl[ib, k], y[k]) \
                        + s2v * (conv_fast[k] * xi[i, j, k])
            absx2 = 0.0
            normx2 = 0.0
            for k in range(n):
                x[k] = xn[k]
                out_x[i + 1, k] = x[k]
                out_y[i + 1, k] = y[k]
                absx2 += x[k] * x[k]
                normx2 += lam[k] * x[k] * x[k]
            out_absx2[i + 1] = absx2
            out_normx2[i + 1] = normx2
            if not (isfinite(absx2) and isfinite(_dot(y, y, n))):
                bad = <int> (i + 1)
                break
    return bad


def run_frozen(double[:, ::1] out_y,
               double[::1] a, double[::1] w, double[::1] conv,
               int g_kind, double g_ax, double g_ay,
               double s2_base, double s2_cy,
               double[::1] x_frozen, double[:, ::1] xi):
    cdef Py_ssize_t n_steps = xi.shape[0]
    cdef Py_ssize_t n = xi.shape[1]
    work = np.empty(n, dtype=np.float64)
    cdef double[::1] wv = work
    cdef double* y = &wv[0]
    cdef Py_ssize_t i, k
    cdef double s2v
    cdef int bad = -1

    with nogil:
        for k in range(n):
            y[k] = out_y[0, k]
        for i in range(n_steps):
            s2v = s2_base + s2_cy * tanh(sqrt(_dot(y, y, n)))
            for k in range(n):
                y[k] = a[k] * y[k] \
                    + w[k] * _pair1(g_kind, g_ax, g_ay, x_frozen[k], y[k]) \
                    + s2v * conv[k] * xi[i, k]
                out_y[i + 1, k] = y[k]
            if not isfinite(_dot(y, y, n)):
                bad = <int> (i + 1)
                break
    return bad
