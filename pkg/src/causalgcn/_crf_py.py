"""Pure numpy lattice kernels; the reference the compiled kernels must match.

Transition matrices are (K+2)x(K+2) with START at index K and END at K+1.
``allowed`` masks legal moves; illegal ones never contribute to any path.
"""

import numpy as np


def _masked(trans, allowed):
    return np.where(allowed.astype(bool), trans, -np.inf)


def _lse(v, axis):
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)), axis=axis)


def crf_forward_backward(emissions, lengths, trans, allowed):
    """Log partition per sentence plus unary and transition marginals.

    Returns ``(logz[B], unary[B,N,K], pair[B,K+2,K+2])`` where ``pair`` holds
    expected transition counts, including moves out of START and into END.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    b_size, n_max, k = emissions.shape
    s, e = k, k + 1
    tr = _masked(np.asarray(trans, dtype=np.float64), np.asarray(allowed))
    inner = tr[:k, :k]
    logz = np.empty(b_size)
    unary = np.zeros((b_size, n_max, k))
    pair = np.zeros((b_size, k + 2, k + 2))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for b in range(b_size):
            n = int(lengths[b])
            em = emissions[b, :n]
            alpha = np.empty((n, k))
            beta = np.empty((n, k))
            alpha[0] = tr[s, :k] + em[0]
            for t in range(1, n):
                alpha[t] = em[t] + _lse(alpha[t - 1][:, None] + inner, axis=0)
            beta[n - 1] = tr[:k, e]
            for t in range(n - 2, -1, -1):
                beta[t] = _lse(inner + (em[t + 1] + beta[t + 1])[None, :], axis=1)
            z = _lse(alpha[n - 1] + tr[:k, e], axis=0)
            logz[b] = z
            unary[b, :n] = np.exp(alpha + beta - z)
            pair[b, s, :k] = unary[b, 0]
            pair[b, :k, e] = unary[b, n - 1]
            for t in range(1, n):
                pair[b, :k, :k] += np.exp(alpha[t - 1][:, None] + inner + (em[t] + beta[t])[None, :] - z)
    return logz, unary, pair


def viterbi(emissions, trans, allowed):
    """Best path for one sentence; ties go to the lowest tag index."""
    em = np.asarray(emissions, dtype=np.float64)
    n, k = em.shape
    s, e = k, k + 1
    tr = _masked(np.asarray(trans, dtype=np.float64), np.asarray(allowed))
    inner = tr[:k, :k]
    delta = tr[s, :k] + em[0]
    back = np.zeros((n, k), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + inner
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(k)] + em[t]
    final = delta + tr[:k, e]
    best = int(np.argmax(final))
    score = float(final[best])
    path = [best]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return np.array(path[::-1], dtype=np.int64), score
