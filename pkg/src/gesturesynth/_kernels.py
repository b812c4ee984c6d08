"""Hot inner loops: log-space HMM recursions, DTAK alignment, nearest-centroid assignment.

Each kernel exists twice, a numba ``@njit`` version and a pure-numpy version
with identical semantics. The dispatch names at the bottom of the module pick
one at import time; set ``GESTURESYNTH_DISABLE_NUMBA=1`` to force numpy.

All HMM kernels take a constraint-indexed transition tensor ``log_trans``
(K x N x N) and an integer track ``ctrack`` (length T). The transition into
frame ``t`` uses ``log_trans[ctrack[t]]`` and the initial distribution uses
``log_prior[ctrack[0]]``. An unconstrained model is K = 1 with a zero track.
"""
import os

import numpy as np

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("GESTURESYNTH_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# --------------------------------------------------------------------------
# numpy implementations

def _lse_axis0(a):
    m = a.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - safe).sum(axis=0)) + safe


def forward_numpy(log_b, log_prior, log_trans, ctrack):
    T, N = log_b.shape
    alpha = np.empty((T, N))
    alpha[0] = log_prior[ctrack[0]] + log_b[0]
    for t in range(1, T):
        alpha[t] = _lse_axis0(alpha[t - 1][:, None] + log_trans[ctrack[t]]) + log_b[t]
    return alpha


def backward_numpy(log_b, log_trans, ctrack):
    T, N = log_b.shape
    beta = np.zeros((T, N))
    for t in range(T - 2, -1, -1):
        tmp = log_trans[ctrack[t + 1]] + (log_b[t + 1] + beta[t + 1])[None, :]
        beta[t] = _lse_axis0(tmp.T)
    return beta


def xi_counts_numpy(log_b, log_trans, ctrack, alpha, beta, loglik, n_constraints):
    T, N = log_b.shape
    counts = np.zeros((n_constraints, N, N))
    for t in range(1, T):
        k = ctrack[t]
        lx = alpha[t - 1][:, None] + log_trans[k] + (log_b[t] + beta[t])[None, :] - loglik
        counts[k] += np.exp(lx)
    return counts


def viterbi_numpy(log_b, log_prior, log_trans, ctrack):
    T, N = log_b.shape
    delta = np.empty((T, N))
    back = np.zeros((T, N), dtype=np.int64)
    delta[0] = log_prior[ctrack[0]] + log_b[0]
    for t in range(1, T):
        scores = delta[t - 1][:, None] + log_trans[ctrack[t]]
        back[t] = np.argmax(scores, axis=0)
        delta[t] = scores[back[t], np.arange(N)] + log_b[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = np.argmax(delta[-1])
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, delta[-1, path[-1]]


def dtak_numpy(a, b, sigma):
    n, m = a.shape[0], b.shape[0]
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    kern = np.exp(-d2 / (2.0 * sigma * sigma))
    u = np.full((n + 1, m + 1), -np.inf)
    u[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            k = kern[i - 1, j - 1]
            u[i, j] = max(u[i - 1, j] + k, u[i - 1, j - 1] + 2.0 * k, u[i, j - 1] + k)
    return u[n, m] / (n + m)


def assign_numpy(data, centroids):
    d2 = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(data.shape[0]), labels]


# --------------------------------------------------------------------------
# numba implementations

if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _lse(v):
        m = -np.inf
        for x in v:
            if x > m:
                m = x
        if m == -np.inf:
            return -np.inf
        s = 0.0
        for x in v:
            s += np.exp(x - m)
        return m + np.log(s)

    @njit(cache=True, nogil=True)
    def forward_numba(log_b, log_prior, log_trans, ctrack):
        T, N = log_b.shape
        alpha = np.empty((T, N))
        buf = np.empty(N)
        for j in range(N):
            alpha[0, j] = log_prior[ctrack[0], j] + log_b[0, j]
        for t in range(1, T):
            k = ctrack[t]
            for j in range(N):
                for i in range(N):
                    buf[i] = alpha[t - 1, i] + log_trans[k, i, j]
                alpha[t, j] = _lse(buf) + log_b[t, j]
        return alpha

    @njit(cache=True, nogil=True)
    def backward_numba(log_b, log_trans, ctrack):
        T, N = log_b.shape
        beta = np.zeros((T, N))
        buf = np.empty(N)
        for t in range(T - 2, -1, -1):
            k = ctrack[t + 1]
            for i in range(N):
                for j in range(N):
                    buf[j] = log_trans[k, i, j] + log_b[t + 1, j] + beta[t + 1, j]
                beta[t, i] = _lse(buf)
        return beta

    @njit(cache=True, nogil=True)
    def xi_counts_numba(log_b, log_trans, ctrack, alpha, beta, loglik, n_constraints):
        T, N = log_b.shape
        counts = np.zeros((n_constraints, N, N))
        for t in range(1, T):
            k = ctrack[t]
            for i in range(N):
                a = alpha[t - 1, i]
                if a == -np.inf:
                    continue
                for j in range(N):
                    lx = a + log_trans[k, i, j] + log_b[t, j] + beta[t, j] - loglik
                    if lx > -np.inf:
                        counts[k, i, j] += np.exp(lx)
        return counts

    @njit(cache=True, nogil=True)
    def viterbi_numba(log_b, log_prior, log_trans, ctrack):
        T, N = log_b.shape
        delta = np.empty((T, N))
        back = np.zeros((T, N), dtype=np.int64)
        for j in range(N):
            delta[0, j] = log_prior[ctrack[0], j] + log_b[0, j]
        for t in range(1, T):
            k = ctrack[t]
            for j in range(N):
                best = -np.inf
                arg = 0
                for i in range(N):
                    s = delta[t - 1, i] + log_trans[k, i, j]
                    if s > best:
                        best = s
                        arg = i
                back[t, j] = arg
                delta[t, j] = best + log_b[t, j]
        path = np.empty(T, dtype=np.int64)
        best = -np.inf
        arg = 0
        for j in range(N):
            if delta[T - 1, j] > best:
                best = delta[T - 1, j]
                arg = j
        path[T - 1] = arg
        for t in range(T - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return path, best

    @njit(cache=True, nogil=True)
    def dtak_numba(a, b, sigma):
        n, m = a.shape[0], b.shape[0]
        d = a.shape[1]
        inv = 1.0 / (2.0 * sigma * sigma)
        u = np.full((n + 1, m + 1), -np.inf)
        u[0, 0] = 0.0
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                d2 = 0.0
                for c in range(d):
                    diff = a[i - 1, c] - b[j - 1, c]
                    d2 += diff * diff
                k = np.exp(-d2 * inv)
                best = u[i - 1, j] + k
                diag = u[i - 1, j - 1] + 2.0 * k
                if diag > best:
                    best = diag
                left = u[i, j - 1] + k
                if left > best:
                    best = left
                u[i, j] = best
        return u[n, m] / (n + m)

    @njit(cache=True, nogil=True)
    def assign_numba(data, centroids):
        n, d = data.shape
        k = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        for p in range(n):
            best = np.inf
            arg = 0
            for c in range(k):
                s = 0.0
                for q in range(d):
                    diff = data[p, q] - centroids[c, q]
                    s += diff * diff
                if s < best:
                    best = s
                    arg = c
            labels[p] = arg
            dist[p] = best
        return labels, dist


# --------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    forward = forward_numba
    backward = backward_numba
    xi_counts = xi_counts_numba
    viterbi = viterbi_numba
    dtak_kernel = dtak_numba
    assign = assign_numba
    BACKEND = "numba"
else:
    forward = forward_numpy
    backward = backward_numpy
    xi_counts = xi_counts_numpy
    viterbi = viterbi_numpy
    dtak_kernel = dtak_numpy
    assign = assign_numpy
    BACKEND = "numpy"
