# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels; mirrors ``dynekf._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, atan2

cnp.import_array()


def measure_batch(const double[::1] x, F):
    cdef const double[:, ::1] f = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], i
    cdef double c = cos(x[2]), s = sin(x[2]), d0, d1, z0, z1
    Z_arr = np.empty((n, 2))
    Hx_arr = np.empty((n, 2, 3))
    Hf_arr = np.empty((n, 2, 2))
    cdef double[:, ::1] Z = Z_arr
    cdef double[:, :, ::1] Hx = Hx_arr
    cdef double[:, :, ::1] Hf = Hf_arr
    for i in range(n):
        d0 = f[i, 0] - x[0]
        d1 = f[i, 1] - x[1]
        z0 = c * d0 + s * d1
        z1 = -s * d0 + c * d1
        Z[i, 0] = z0
        Z[i, 1] = z1
        Hx[i, 0, 0] = -c
        Hx[i, 0, 1] = -s
        Hx[i, 0, 2] = z1
        Hx[i, 1, 0] = s
        Hx[i, 1, 1] = -c
        Hx[i, 1, 2] = -z0
        Hf[i, 0, 0] = c
        Hf[i, 0, 1] = s
        Hf[i, 1, 0] = -s
        Hf[i, 1, 1] = c
    return Z_arr, Hx_arr, Hf_arr


def inverse_measure_batch(const double[::1] x, Zin):
    cdef const double[:, ::1] z = np.ascontiguousarray(Zin, dtype=np.float64)
    cdef Py_ssize_t n = z.shape[0], i
    cdef double c = cos(x[2]), s = sin(x[2]), r0, r1
    F_arr = np.empty((n, 2))
    Lx_arr = np.zeros((n, 2, 3))
    Lz_arr = np.empty((n, 2, 2))
    cdef double[:, ::1] F = F_arr
    cdef double[:, :, ::1] Lx = Lx_arr
    cdef double[:, :, ::1] Lz = Lz_arr
    for i in range(n):
        r0 = c * z[i, 0] - s * z[i, 1]
        r1 = s * z[i, 0] + c * z[i, 1]
        F[i, 0] = x[0] + r0
        F[i, 1] = x[1] + r1
        Lx[i, 0, 0] = 1.0
        Lx[i, 1, 1] = 1.0
        Lx[i, 0, 2] = -r1
        Lx[i, 1, 2] = r0
        Lz[i, 0, 0] = c
        Lz[i, 0, 1] = -s
        Lz[i, 1, 0] = s
        Lz[i, 1, 1] = c
    return F_arr, Lx_arr, Lz_arr


def cov_times_ht(P_in, xi_in, fi_in, Hx_in, Hf_in):
    cdef const double[:, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef const cnp.int64_t[::1] xi = np.ascontiguousarray(xi_in, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] fi = np.ascontiguousarray(fi_in, dtype=np.int64)
    cdef const double[:, :, ::1] Hx = np.ascontiguousarray(Hx_in, dtype=np.float64)
    cdef const double[:, :, ::1] Hf = np.ascontiguousarray(Hf_in, dtype=np.float64)
    cdef Py_ssize_t d = P.shape[0], n = Hx.shape[0], r, i, a
    cdef double p0, p1, p2, q0, q1, acc
    out_arr = np.empty((d, 2 * n))
    cdef double[:, ::1] out = out_arr
    for r in range(d):
        p0 = P[r, xi[0]]
        p1 = P[r, xi[1]]
        p2 = P[r, xi[2]]
        for i in range(n):
            q0 = P[r, fi[i, 0]]
            q1 = P[r, fi[i, 1]]
            for a in range(2):
                acc = p0 * Hx[i, a, 0] + p1 * Hx[i, a, 1] + p2 * Hx[i, a, 2]
                acc = acc + q0 * Hf[i, a, 0] + q1 * Hf[i, a, 1]
                out[r, 2 * i + a] = acc
    return out_arr


def innovation_cov(PHt_in, xi_in, fi_in, Hx_in, Hf_in, R_in):
    cdef const double[:, ::1] PHt = np.ascontiguousarray(PHt_in, dtype=np.float64)
    cdef const cnp.int64_t[::1] xi = np.ascontiguousarray(xi_in, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] fi = np.ascontiguousarray(fi_in, dtype=np.int64)
    cdef const double[:, :, ::1] Hx = np.ascontiguousarray(Hx_in, dtype=np.float64)
    cdef const double[:, :, ::1] Hf = np.ascontiguousarray(Hf_in, dtype=np.float64)
    cdef const double[:, ::1] R = np.ascontiguousarray(R_in, dtype=np.float64)
    cdef Py_ssize_t n = Hx.shape[0], m = 2 * n, i, a, col, row
    cdef double acc
    S_arr = np.empty((m, m))
    cdef double[:, ::1] S = S_arr
    for i in range(n):
        for a in range(2):
            row = 2 * i + a
            for col in range(m):
                acc = (Hx[i, a, 0] * PHt[xi[0], col] + Hx[i, a, 1] * PHt[xi[1], col]
                       + Hx[i, a, 2] * PHt[xi[2], col]
                       + Hf[i, a, 0] * PHt[fi[i, 0], col] + Hf[i, a, 1] * PHt[fi[i, 1], col])
                S[row, col] = acc + R[row, col]
    for row in range(m):
        for col in range(row + 1, m):
            acc = 0.5 * (S[row, col] + S[col, row])
            S[row, col] = acc
            S[col, row] = acc
    return S_arr


def procrustes(f0_in, ft_in):
    cdef const double[:, ::1] f0 = np.ascontiguousarray(f0_in, dtype=np.float64)
    cdef const double[:, ::1] ft = np.ascontiguousarray(ft_in, dtype=np.float64)
    cdef Py_ssize_t n = f0.shape[0], i
    cdef double c00 = 0, c01 = 0, ct0 = 0, ct1 = 0
    cdef double s = 0, c = 0, aa = 0, bb = 0, den, a0, a1, b0, b1
    for i in range(n):
        c00 += f0[i, 0]
        c01 += f0[i, 1]
        ct0 += ft[i, 0]
        ct1 += ft[i, 1]
    c00 /= n
    c01 /= n
    ct0 /= n
    ct1 /= n
    for i in range(n):
        a0 = f0[i, 0] - c00
        a1 = f0[i, 1] - c01
        b0 = ft[i, 0] - ct0
        b1 = ft[i, 1] - ct1
        s += a0 * b1 - a1 * b0
        c += a0 * b0 + a1 * b1
        aa += a0 * a0 + a1 * a1
        bb += b0 * b0 + b1 * b1
    xi_arr = np.zeros(3)
    g0_arr = np.zeros((3, 2 * n))
    gt_arr = np.zeros((3, 2 * n))
    cdef double[::1] xi = xi_arr
    cdef double[:, ::1] g0 = g0_arr
    cdef double[:, ::1] gt = gt_arr
    xi[0] = ct0 - c00
    xi[1] = ct1 - c01
    for i in range(n):
        g0[0, 2 * i] = -1.0 / n
        g0[1, 2 * i + 1] = -1.0 / n
        gt[0, 2 * i] = 1.0 / n
        gt[1, 2 * i + 1] = 1.0 / n
    den = s * s + c * c
    if n == 1 or aa * bb == 0.0 or den <= 1e-12 * aa * bb:
        return xi_arr, g0_arr, gt_arr, True
    xi[2] = atan2(s, c)
    for i in range(n):
        a0 = f0[i, 0] - c00
        a1 = f0[i, 1] - c01
        b0 = ft[i, 0] - ct0
        b1 = ft[i, 1] - ct1
        g0[2, 2 * i] = (c * b1 - s * b0) / den
        g0[2, 2 * i + 1] = (-c * b0 - s * b1) / den
        gt[2, 2 * i] = (-c * a1 - s * a0) / den
        gt[2, 2 * i + 1] = (c * a0 - s * a1) / den
    return xi_arr, g0_arr, gt_arr, False
