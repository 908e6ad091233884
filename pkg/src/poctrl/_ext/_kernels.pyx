# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts as ``_kernels_py``."""
import numpy as np

from libc.math cimport floor

cdef double SNAP = 1e-13


cdef inline long _rank(const long[:] cnt, const long[:, :, ::1] S, Py_ssize_t K, long M) noexcept nogil:
    cdef long r = 0
    cdef long rem = M
    cdef Py_ssize_t i
    for i in range(K - 1):
        r += S[K - 1 - i, rem, cnt[i]]
        rem -= cnt[i]
    return r


cdef void _project_one(const double[:] mu, long M, const long[:, :, ::1] S,
                       double[:] q, double[:] d, long[:] cum, long[:] cnt, long[:] order,
                       long[:] ranks, double[:] alpha) noexcept nogil:
    cdef Py_ssize_t K = mu.shape[0]
    cdef Py_ssize_t i, m, t
    cdef double acc = 0.0
    cdef double f
    cdef long tmp, base_rank
    for i in range(K - 1, -1, -1):
        acc += mu[i]
        q[i] = M * acc
    for i in range(K):
        if q[i] < 0.0:
            q[i] = 0.0
        elif q[i] > M:
            q[i] = M
    q[0] = M
    for i in range(K):
        f = floor(q[i])
        d[i] = q[i] - f
        cum[i] = <long> f
        if d[i] > 1.0 - SNAP:
            cum[i] += 1
            d[i] = 0.0
        elif d[i] < SNAP:
            d[i] = 0.0
        if cum[i] > M:
            cum[i] = M
    d[0] = 0.0
    # indices 1..K-1 sorted by d descending, ties by index (stable insertion)
    for i in range(K - 1):
        order[i] = i + 1
    for i in range(1, K - 1):
        tmp = order[i]
        t = i
        while t > 0 and d[order[t - 1]] < d[tmp]:
            order[t] = order[t - 1]
            t -= 1
        order[t] = tmp

    for i in range(K - 1):
        cnt[i] = cum[i] - cum[i + 1]
    cnt[K - 1] = cum[K - 1]
    base_rank = _rank(cnt, S, K, M)
    ranks[0] = base_rank
    if K > 1:
        alpha[0] = 1.0 - d[order[0]]
    else:
        alpha[0] = 1.0
    for m in range(1, K):
        i = order[m - 1]
        if m < K - 1:
            alpha[m] = d[i] - d[order[m]]
        else:
            alpha[m] = d[i]
        if alpha[m] < 0.0:
            alpha[m] = 0.0
        if d[i] > 0.0:
            cum[i] += 1
            cnt[i - 1] -= 1
            cnt[i] += 1
            ranks[m] = _rank(cnt, S, K, M)
        else:
            ranks[m] = base_rank
    if alpha[0] < 0.0:
        alpha[0] = 0.0


def project(mu, long M, S):
    cdef const double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const long[:, :, ::1] Sv = np.ascontiguousarray(S, dtype=np.int64)
    cdef Py_ssize_t B = mv.shape[0], K = mv.shape[1], b
    ranks = np.empty((B, K), dtype=np.int64)
    alpha = np.empty((B, K), dtype=np.float64)
    cdef long[:, ::1] rv = ranks
    cdef double[:, ::1] av = alpha
    cdef double[::1] q = np.empty(K), d = np.empty(K)
    cdef long[::1] cum = np.empty(K, dtype=np.int64), cnt = np.empty(K, dtype=np.int64)
    cdef long[::1] order = np.empty(max(K - 1, 1), dtype=np.int64)
    with nogil:
        for b in range(B):
            _project_one(mv[b], M, Sv, q, d, cum, cnt, order, rv[b], av[b])
    return ranks, alpha


cdef double _filter_one(const double[:] mu, const double[:] p, const double[:] up,
                        const double[:] down, const double[:] stay, double eta,
                        double[:] w, double[:] out) noexcept nogil:
    cdef Py_ssize_t K = mu.shape[0], k
    cdef double Z = 0.0, s = 0.0, v
    for k in range(K):
        Z += mu[k] * p[k]
        w[k] = mu[k] * (1.0 + p[k] * eta)
    Z = 1.0 + Z * eta
    for k in range(K):
        v = w[k] * stay[k]
        if k > 0:
            v += w[k - 1] * up[k - 1]
        if k < K - 1:
            v += w[k + 1] * down[k + 1]
        out[k] = v / Z
        s += out[k]
    for k in range(K):
        out[k] = out[k] / s
    return Z


def filter_step(mu, pvals, up, down, stay, actions, eta):
    cdef const double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(pvals, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(up, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(down, dtype=np.float64)
    cdef const double[:, ::1] sv = np.ascontiguousarray(stay, dtype=np.float64)
    cdef const long[::1] act = np.ascontiguousarray(actions, dtype=np.int64)
    cdef const double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef Py_ssize_t B = mv.shape[0], K = mv.shape[1], b
    out = np.empty((B, K))
    Z = np.empty(B)
    cdef double[:, ::1] ov = out
    cdef double[::1] zv = Z
    cdef double[::1] w = np.empty(K)
    with nogil:
        for b in range(B):
            zv[b] = _filter_one(mv[b], pv, uv[act[b]], dv[act[b]], sv[act[b]], ev[b], w, ov[b])
    return out, Z


def dpp_layer(verts, pvals, up, down, stay, kvals, double h, double sqrt_h, vnext,
              long M, S, Py_ssize_t lo=0, hi=None):
    cdef const double[:, ::1] mv = np.ascontiguousarray(verts, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(pvals, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(up, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(down, dtype=np.float64)
    cdef const double[:, ::1] sv = np.ascontiguousarray(stay, dtype=np.float64)
    cdef const double[:, ::1] kv = np.ascontiguousarray(kvals, dtype=np.float64)
    cdef const double[::1] vn = np.ascontiguousarray(vnext, dtype=np.float64)
    cdef const long[:, :, ::1] Sv = np.ascontiguousarray(S, dtype=np.int64)
    cdef Py_ssize_t H = mv.shape[0] if hi is None else hi
    cdef Py_ssize_t K = mv.shape[1], A = uv.shape[0]
    cdef Py_ssize_t v, j, k, m, si
    values = np.empty(H - lo)
    policy = np.empty(H - lo, dtype=np.int64)
    cdef double[::1] val = values
    cdef long[::1] pol = policy
    cdef double[::1] w = np.empty(K), nu = np.empty(K), q = np.empty(K), d = np.empty(K)
    cdef double[::1] alpha = np.empty(K)
    cdef long[::1] cum = np.empty(K, dtype=np.int64), cnt = np.empty(K, dtype=np.int64)
    cdef long[::1] ranks = np.empty(K, dtype=np.int64)
    cdef long[::1] order = np.empty(max(K - 1, 1), dtype=np.int64)
    cdef double best, qa, run, cont, Z, vn_b, eta
    cdef long arg
    with nogil:
        for v in range(lo, H):
            best = -1e308
            arg = 0
            for j in range(A):
                run = 0.0
                for k in range(K):
                    run += mv[v, k] * kv[j, k]
                cont = 0.0
                for si in range(2):
                    eta = sqrt_h if si == 0 else -sqrt_h
                    Z = _filter_one(mv[v], pv, uv[j], dv[j], sv[j], eta, w, nu)
                    _project_one(nu, M, Sv, q, d, cum, cnt, order, ranks, alpha)
                    vn_b = 0.0
                    for m in range(K):
                        vn_b += alpha[m] * vn[ranks[m]]
                    cont += 0.5 * Z * vn_b
                qa = h * run + cont
                if j == 0 or qa > best:
                    best = qa
                    arg = j
            val[v - lo] = best
            pol[v - lo] = arg
    return values, policy
