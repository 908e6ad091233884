import math

import numpy as np
import pytest

from poctrl import kernels
from poctrl._ext import _kernels_py
from poctrl.dpp import MeasureGrid

compiled = pytest.importorskip("poctrl._ext._kernels")


def _random_beliefs(rng, B, K):
    w = rng.random((B, K)) ** 3
    w[rng.random((B, K)) < 0.3] = 0.0
    w[:, 0] += 1e-9
    return w / w.sum(axis=1, keepdims=True)


def _lq_layer(K=7, A=7):
    rng = np.random.default_rng(0)
    raw = rng.random((A, K)) * 0.1
    up, down = raw, raw[::-1] * 0.9
    stay = 1.0 - up - down
    pvals = np.linspace(-0.3, 0.3, K)
    kvals = -rng.random((A, K))
    return pvals, up, down, stay, kvals


def test_rank_table_and_counts():
    g = MeasureGrid(4, 6)
    assert np.array_equal(kernels.rank_counts(g.counts, g.rank_table), np.arange(len(g)))


@pytest.mark.parametrize("K,M", [(2, 1), (3, 8), (7, 8), (9, 4)])
def test_projection_agrees(K, M):
    S = kernels.rank_table(K, M)
    mu = _random_beliefs(np.random.default_rng(K * M), 500, K)
    r1, a1 = compiled.project(mu, M, S)
    r2, a2 = _kernels_py.project(mu, M, S)
    assert np.array_equal(r1, r2)
    assert np.allclose(a1, a2, atol=1e-15, rtol=0)


def test_filter_step_agrees():
    pvals, up, down, stay, _ = _lq_layer()
    rng = np.random.default_rng(1)
    mu = _random_beliefs(rng, 300, 7)
    acts = rng.integers(0, 7, 300)
    eta = rng.choice([-0.03, 0.03], 300)
    o1, z1 = compiled.filter_step(mu, pvals, up, down, stay, acts, eta)
    o2, z2 = _kernels_py.filter_step(mu, pvals, up, down, stay, acts, eta)
    assert np.allclose(o1, o2, atol=1e-15, rtol=0)
    assert np.allclose(z1, z2, atol=1e-15, rtol=0)


def test_dpp_layer_agrees_and_slices():
    pvals, up, down, stay, kvals = _lq_layer()
    g = MeasureGrid(7, 5)
    vnext = np.random.default_rng(2).standard_normal(len(g))
    h = 1e-3
    args = (g.vertices, pvals, up, down, stay, kvals, h, math.sqrt(h), vnext, g.M, g.rank_table)
    v1, p1 = compiled.dpp_layer(*args)
    v2, p2 = _kernels_py.dpp_layer(*args)
    assert np.allclose(v1, v2, atol=1e-14, rtol=0)
    assert np.array_equal(p1, p2)
    v3, p3 = compiled.dpp_layer(*args, 100, 250)
    assert np.array_equal(v3, v1[100:250]) and np.array_equal(p3, p1[100:250])


def test_backend_switch():
    old = kernels.backend_name()
    try:
        kernels.set_backend("python")
        assert kernels.get() is _kernels_py
        kernels.set_backend("cython")
        assert kernels.backend_name() == "cython"
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
    finally:
        kernels.set_backend(old)
