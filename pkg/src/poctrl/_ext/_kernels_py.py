"""Numpy implementations of the hot kernels.

Mirrors the compiled ``_kernels`` extension function for function; used
when the extension is not built or when ``set_backend("python")`` is called.
"""
import numpy as np

SNAP = 1e-13


def rank_table(K, M):
    """``S[k, r, c] = sum_{j<c} N(k, r - j)``, N = compositions of r into k parts."""
    N = np.zeros((K + 1, M + 1), dtype=np.int64)
    N[0, 0] = 1
    for k in range(1, K + 1):
        for r in range(M + 1):
            N[k, r] = N[k - 1, : r + 1].sum()
    S = np.zeros((K, M + 1, M + 2), dtype=np.int64)
    for k in range(K):
        for r in range(M + 1):
            acc = 0
            for c in range(r + 1):
                S[k, r, c] = acc
                acc += N[k, r - c]
            S[k, r, r + 1] = acc
    return S


def rank_counts(counts, S):
    """Lexicographic rank of integer composition rows ``counts`` (shape ``(B, K)``)."""
    counts = np.asarray(counts, dtype=np.int64)
    B, K = counts.shape
    rem = counts.sum(axis=1)
    r = np.zeros(B, dtype=np.int64)
    for i in range(K - 1):
        c = counts[:, i]
        r += S[K - 1 - i, rem, c]
        rem = rem - c
    return r


def project(mu, M, S):
    """Freudenthal barycentric coordinates of beliefs ``mu`` (shape ``(B, K)``).

    Returns ``(ranks, alpha)`` of shape ``(B, K)``; unused slots carry weight
    zero and the rank of the base vertex.
    """
    mu = np.asarray(mu, dtype=float)
    B, K = mu.shape
    q = M * np.cumsum(mu[:, ::-1], axis=1)[:, ::-1]
    q = np.clip(q, 0.0, M)
    q[:, 0] = M
    base = np.floor(q)
    d = q - base
    near1 = d > 1.0 - SNAP
    base[near1] += 1.0
    d[near1] = 0.0
    d[d < SNAP] = 0.0
    d[:, 0] = 0.0
    base = np.minimum(base, M)

    order = np.argsort(-d[:, 1:], axis=1, kind="stable") + 1
    ds = np.take_along_axis(d, order, axis=1)  # descending, shape (B, K-1)

    alpha = np.empty((B, K))
    alpha[:, 0] = 1.0 - (ds[:, 0] if K > 1 else 0.0)
    if K > 1:
        alpha[:, 1:-1] = ds[:, :-1] - ds[:, 1:]
        alpha[:, -1] = ds[:, -1]

    cum = base.astype(np.int64)
    ranks = np.empty((B, K), dtype=np.int64)
    c0 = cum - np.concatenate([cum[:, 1:], np.zeros((B, 1), np.int64)], axis=1)
    base_rank = rank_counts(c0, S)
    ranks[:, 0] = base_rank
    rows = np.arange(B)
    for m in range(1, K):
        idx = order[:, m - 1]
        active = ds[:, m - 1] > 0.0
        cum = cum.copy()
        cum[rows[active], idx[active]] += 1
        cnt = cum - np.concatenate([cum[:, 1:], np.zeros((B, 1), np.int64)], axis=1)
        r = base_rank.copy()
        if active.any():
            r[active] = rank_counts(cnt[active], S)
        ranks[:, m] = r
    alpha[alpha < 0.0] = 0.0
    return ranks, alpha


def filter_step(mu, pvals, up, down, stay, actions, eta):
    """One filter update for a batch of beliefs.

    ``up``/``down``/``stay`` are ``(A, K)`` for the current time step;
    ``actions`` and ``eta`` are per-row.  Returns ``(new_mu, Z)`` where ``Z``
    is the theoretical normalizer ``1 + mu(p) eta``.
    """
    mu = np.asarray(mu, dtype=float)
    eta = np.asarray(eta, dtype=float)
    w = mu * (1.0 + pvals[None, :] * eta[:, None])
    Z = 1.0 + (mu @ pvals) * eta
    u, dn, st = up[actions], down[actions], stay[actions]
    nu = w * st
    nu[:, 1:] += w[:, :-1] * u[:, :-1]
    nu[:, :-1] += w[:, 1:] * dn[:, 1:]
    nu /= Z[:, None]
    nu /= nu.sum(axis=1, keepdims=True)
    return nu, Z


def dpp_layer(verts, pvals, up, down, stay, kvals, h, sqrt_h, vnext, M, S, lo=0, hi=None):
    """Bellman update of one time layer over vertices ``lo:hi``.

    ``verts`` holds the grid beliefs, ``kvals`` is ``(A, K)`` running reward
    at the layer time.  Returns ``(values, policy)`` for the slice.
    """
    hi = verts.shape[0] if hi is None else hi
    mu = verts[lo:hi]
    B = mu.shape[0]
    A = up.shape[0]
    best = np.full(B, -np.inf)
    arg = np.zeros(B, dtype=np.int64)
    for j in range(A):
        acts = np.full(B, j, dtype=np.int64)
        q = h * (mu @ kvals[j])
        cont = np.zeros(B)
        for sgn in (1.0, -1.0):
            eta = np.full(B, sgn * sqrt_h)
            new, Z = filter_step(mu, pvals, up, down, stay, acts, eta)
            ranks, alpha = project(new, M, S)
            cont += 0.5 * Z * np.sum(alpha * vnext[ranks], axis=1)
        q = q + cont
        better = q > best
        best[better] = q[better]
        arg[better] = j
    return best, arg
