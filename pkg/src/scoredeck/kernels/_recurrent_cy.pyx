# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of kernels/reference.py.

Same gate layout and update order; differs from the reference only in
float summation order (hand loops instead of BLAS), so results agree to
rounding error.
"""

import numpy as np

from libc.math cimport exp, tanh


cdef inline double _sig(double z) nogil:
    return 1.0 / (1.0 + exp(-z))


def lstm_forward(double[:, :, ::1] xp, double[:, ::1] Wh):
    cdef Py_ssize_t B = xp.shape[0]
    cdef Py_ssize_t T = xp.shape[1]
    cdef Py_ssize_t four_b = xp.shape[2]
    cdef Py_ssize_t b = four_b // 4

    H_arr = np.zeros((B, T, b))
    C_arr = np.zeros((B, T, b))
    G_arr = np.zeros((B, T, four_b))
    TC_arr = np.zeros((B, T, b))
    z_arr = np.empty(four_b)

    cdef double[:, :, ::1] H = H_arr
    cdef double[:, :, ::1] C = C_arr
    cdef double[:, :, ::1] G = G_arr
    cdef double[:, :, ::1] TC = TC_arr
    cdef double[::1] z = z_arr

    cdef Py_ssize_t s, t, j, k
    cdef double hk, i, f, g, o, cp, c, tc

    with nogil:
        for s in range(B):
            for t in range(T):
                for j in range(four_b):
                    z[j] = xp[s, t, j]
                if t > 0:
                    for k in range(b):
                        hk = H[s, t - 1, k]
                        for j in range(four_b):
                            z[j] += hk * Wh[k, j]
                for k in range(b):
                    i = _sig(z[k])
                    f = _sig(z[b + k])
                    g = tanh(z[2 * b + k])
                    o = _sig(z[3 * b + k])
                    cp = C[s, t - 1, k] if t > 0 else 0.0
                    c = f * cp + i * g
                    tc = tanh(c)
                    G[s, t, k] = i
                    G[s, t, b + k] = f
                    G[s, t, 2 * b + k] = g
                    G[s, t, 3 * b + k] = o
                    C[s, t, k] = c
                    TC[s, t, k] = tc
                    H[s, t, k] = o * tc
    return H_arr, C_arr, G_arr, TC_arr


def lstm_backward(
    double[:, :, ::1] dH,
    double[:, ::1] Wh,
    double[:, :, ::1] H,
    double[:, :, ::1] C,
    double[:, :, ::1] G,
    double[:, :, ::1] TC,
):
    cdef Py_ssize_t B = H.shape[0]
    cdef Py_ssize_t T = H.shape[1]
    cdef Py_ssize_t b = H.shape[2]
    cdef Py_ssize_t four_b = 4 * b

    dXp_arr = np.zeros((B, T, four_b))
    dWh_arr = np.zeros((b, four_b))
    dz_arr = np.empty(four_b)
    dh_next_arr = np.empty(b)
    dc_next_arr = np.empty(b)

    cdef double[:, :, ::1] dXp = dXp_arr
    cdef double[:, ::1] dWh = dWh_arr
    cdef double[::1] dz = dz_arr
    cdef double[::1] dh_next = dh_next_arr
    cdef double[::1] dc_next = dc_next_arr

    cdef Py_ssize_t s, t, j, k
    cdef double i, f, g, o, tc, cp, dh, do_, dc, di, dg, df, hk, acc

    with nogil:
        for s in range(B):
            for k in range(b):
                dh_next[k] = 0.0
                dc_next[k] = 0.0
            for t in range(T - 1, -1, -1):
                for k in range(b):
                    i = G[s, t, k]
                    f = G[s, t, b + k]
                    g = G[s, t, 2 * b + k]
                    o = G[s, t, 3 * b + k]
                    tc = TC[s, t, k]
                    cp = C[s, t - 1, k] if t > 0 else 0.0

                    dh = dH[s, t, k] + dh_next[k]
                    do_ = dh * tc
                    dc = dc_next[k] + dh * o * (1.0 - tc * tc)
                    di = dc * g
                    dg = dc * i
                    df = dc * cp
                    dc_next[k] = dc * f

                    dz[k] = di * i * (1.0 - i)
                    dz[b + k] = df * f * (1.0 - f)
                    dz[2 * b + k] = dg * (1.0 - g * g)
                    dz[3 * b + k] = do_ * o * (1.0 - o)
                for j in range(four_b):
                    dXp[s, t, j] = dz[j]
                if t > 0:
                    for k in range(b):
                        hk = H[s, t - 1, k]
                        for j in range(four_b):
                            dWh[k, j] += hk * dz[j]
                for k in range(b):
                    acc = 0.0
                    for j in range(four_b):
                        acc += dz[j] * Wh[k, j]
                    dh_next[k] = acc
    return dXp_arr, dWh_arr
