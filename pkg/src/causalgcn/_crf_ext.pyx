# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CRF lattice kernels. Same contracts as ``_crf_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


cdef inline double _lse2(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log(1.0 + exp(b - a))
    return b + log(1.0 + exp(a - b))


def crf_forward_backward(emissions, lengths, trans, allowed):
    cdef double[:, :, ::1] em = np.ascontiguousarray(emissions, dtype=np.float64)
    cdef long[::1] lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef Py_ssize_t B = em.shape[0], N = em.shape[1], K = em.shape[2]
    cdef Py_ssize_t S = K, E = K + 1
    tr_np = np.where(np.asarray(allowed).astype(bool), np.asarray(trans, dtype=np.float64), -np.inf)
    cdef double[:, ::1] tr = np.ascontiguousarray(tr_np)

    logz_np = np.empty(B)
    unary_np = np.zeros((B, N, K))
    pair_np = np.zeros((B, K + 2, K + 2))
    cdef double[::1] logz = logz_np
    cdef double[:, :, ::1] unary = unary_np
    cdef double[:, :, ::1] pair = pair_np
    alpha_np = np.empty((N, K))
    beta_np = np.empty((N, K))
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] beta = beta_np

    cdef Py_ssize_t b, t, i, j, n
    cdef double acc, z, v

    with nogil:
        for b in range(B):
            n = lens[b]
            for j in range(K):
                alpha[0, j] = tr[S, j] + em[b, 0, j]
            for t in range(1, n):
                for j in range(K):
                    acc = -INFINITY
                    for i in range(K):
                        acc = _lse2(acc, alpha[t - 1, i] + tr[i, j])
                    alpha[t, j] = acc + em[b, t, j]
            for j in range(K):
                beta[n - 1, j] = tr[j, E]
            for t in range(n - 2, -1, -1):
                for i in range(K):
                    acc = -INFINITY
                    for j in range(K):
                        acc = _lse2(acc, tr[i, j] + em[b, t + 1, j] + beta[t + 1, j])
                    beta[t, i] = acc
            z = -INFINITY
            for j in range(K):
                z = _lse2(z, alpha[n - 1, j] + tr[j, E])
            logz[b] = z
            for t in range(n):
                for j in range(K):
                    v = alpha[t, j] + beta[t, j] - z
                    unary[b, t, j] = exp(v) if v != -INFINITY else 0.0
            for j in range(K):
                pair[b, S, j] = unary[b, 0, j]
                pair[b, j, E] = unary[b, n - 1, j]
            for t in range(1, n):
                for i in range(K):
                    if alpha[t - 1, i] == -INFINITY:
                        continue
                    for j in range(K):
                        v = alpha[t - 1, i] + tr[i, j] + em[b, t, j] + beta[t, j] - z
                        if v != -INFINITY:
                            pair[b, i, j] += exp(v)
    return logz_np, unary_np, pair_np


def viterbi(emissions, trans, allowed):
    cdef double[:, ::1] em = np.ascontiguousarray(emissions, dtype=np.float64)
    cdef Py_ssize_t N = em.shape[0], K = em.shape[1]
    cdef Py_ssize_t S = K, E = K + 1
    tr_np = np.where(np.asarray(allowed).astype(bool), np.asarray(trans, dtype=np.float64), -np.inf)
    cdef double[:, ::1] tr = np.ascontiguousarray(tr_np)
    back_np = np.zeros((N, K), dtype=np.int64)
    cdef long[:, ::1] back = back_np
    delta_np = np.empty(K)
    nxt_np = np.empty(K)
    cdef double[::1] delta = delta_np
    cdef double[::1] nxt = nxt_np
    path_np = np.zeros(N, dtype=np.int64)
    cdef long[::1] path = path_np
    cdef Py_ssize_t t, i, j, arg, best
    cdef double v, bv, score

    with nogil:
        for j in range(K):
            delta[j] = tr[S, j] + em[0, j]
        for t in range(1, N):
            for j in range(K):
                arg = 0
                bv = delta[0] + tr[0, j]
                for i in range(1, K):
                    v = delta[i] + tr[i, j]
                    if v > bv:
                        bv = v
                        arg = i
                back[t, j] = arg
                nxt[j] = bv + em[t, j]
            for j in range(K):
                delta[j] = nxt[j]
        best = 0
        score = delta[0] + tr[0, E]
        for j in range(1, K):
            v = delta[j] + tr[j, E]
            if v > score:
                score = v
                best = j
        path[N - 1] = best
        for t in range(N - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
    return path_np, float(score)
