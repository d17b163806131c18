# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled filter-bank kernels; see ``_kernels_py`` for the reference contract."""
import numpy as np
from libc.math cimport exp

cdef double EPS = 1e-8


def bank_weights(const double[:, ::1] params, Py_ssize_t T, Py_ssize_t N):
    cdef Py_ssize_t M = params.shape[0]
    weights = np.empty((M, N, T))
    mu_arr = np.empty((M, N))
    rowsum_arr = np.empty((M, N))
    cdef double[:, :, ::1] w = weights
    cdef double[:, ::1] mu = mu_arr
    cdef double[:, ::1] rs = rowsum_arr
    cdef Py_ssize_t m, i, t
    cdef double g, delta, inv2v, c, d, e, s, invz
    for m in range(M):
        g = 0.5 * T * (params[m, 0] + 1.0)
        delta = (<double>T / (N - 1)) * exp(params[m, 1]) if N > 1 else 0.0
        inv2v = 0.5 / exp(params[m, 2])
        for i in range(N):
            c = g + (i - 0.5 * N + 0.5) * delta
            mu[m, i] = c
            s = 0.0
            for t in range(T):
                d = t - c
                e = exp(-d * d * inv2v)
                w[m, i, t] = e
                s += e
            rs[m, i] = s
            invz = 1.0 / (s if s > EPS else EPS)
            for t in range(T):
                w[m, i, t] = w[m, i, t] * invz
    return weights, mu_arr, rowsum_arr


def bank_forward(const double[:, ::1] params, Py_ssize_t T, Py_ssize_t N,
                 const double[:, ::1] x):
    weights, mu_arr, rowsum_arr = bank_weights(params, T, N)
    cdef Py_ssize_t M = params.shape[0]
    xa = np.asarray(x)
    # dense products go through BLAS; the Gaussian loops above stay in C
    out_arr = (weights.reshape(M * N, T) @ xa).reshape(M, N, xa.shape[1])
    return weights, mu_arr, rowsum_arr, out_arr


def bank_backward(const double[:, ::1] params, const double[:, :, ::1] w,
                  const double[:, ::1] mu, const double[:, ::1] rowsum,
                  const double[:, ::1] x, const double[:, :, ::1] up):
    cdef Py_ssize_t M = w.shape[0], N = w.shape[1], T = w.shape[2]
    cdef Py_ssize_t D = x.shape[1]
    w2 = np.asarray(w).reshape(M * N, T)
    up2 = np.asarray(up).reshape(M * N, D)
    g_arr = np.ascontiguousarray(up2 @ np.asarray(x).T)
    dx_arr = w2.T @ up2
    dparams_arr = np.zeros((M, 3))
    cdef double[:, ::1] dparams = dparams_arr
    cdef const double[:, ::1] G = g_arr
    cdef Py_ssize_t m, i, t, row
    cdef double delta, var, z, inner, wt, dE, ediff, diff, dmu, dg, dld, dlv
    cdef bint clamped
    for m in range(M):
        delta = (<double>T / (N - 1)) * exp(params[m, 1]) if N > 1 else 0.0
        var = exp(params[m, 2])
        dg = 0.0
        dld = 0.0
        dlv = 0.0
        for i in range(N):
            row = m * N + i
            clamped = rowsum[m, i] < EPS
            z = EPS if clamped else rowsum[m, i]
            inner = 0.0
            for t in range(T):
                inner += G[row, t] * w[m, i, t]
            dmu = 0.0
            for t in range(T):
                wt = w[m, i, t]
                if wt == 0.0:
                    continue
                if clamped:
                    dE = G[row, t] / EPS
                else:
                    dE = (G[row, t] - inner) / z
                diff = t - mu[m, i]
                ediff = dE * wt * z * diff
                dmu += ediff
                dlv += ediff * diff
            dmu /= var
            dg += dmu
            dld += dmu * (i - 0.5 * N + 0.5)
        dparams[m, 0] = 0.5 * T * dg
        dparams[m, 1] = dld * delta
        dparams[m, 2] = dlv / (2.0 * var)
    return dparams_arr, dx_arr
