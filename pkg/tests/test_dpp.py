import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poctrl import kernels
from poctrl.dpp import (
    MeasureGrid,
    backward_induction,
    brute_force_value,
    build_measure_grid,
    exact_tree_value,
    extract_policy,
    project_measure,
    read_tables,
    vertex_count,
    write_tables,
)
from poctrl.errors import InstanceTooLargeError, InvalidProblemError
from poctrl.filter import DiscreteMeasure
from poctrl.lattice import ObservationLaw
from poctrl.model import lq_problem

from conftest import make_spec, setup, toy_spec


@pytest.mark.parametrize("K,M,count", [(2, 2, 3), (3, 2, 6), (7, 8, 3003), (12, 6, 12376)])
def test_vertex_counts(K, M, count):
    assert vertex_count(K, M) == count
    assert len(build_measure_grid(K, M)) == count


def test_grid_2_2_vertices():
    g = MeasureGrid(2, 2)
    assert g.vertices.tolist() == [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]


def test_index_roundtrip():
    g = MeasureGrid(4, 5)
    for vid, c in enumerate(g.counts):
        assert g.index(c) == vid
    with pytest.raises(InvalidProblemError):
        g.index([1, 1, 1, 1])


def test_grid_cap():
    with pytest.raises(InstanceTooLargeError) as exc:
        MeasureGrid(12, 12, cap=10 ** 6)
    assert exc.value.count == math.comb(23, 11)


def test_projection_midpoint(backend):
    g2 = MeasureGrid(2, 2)
    bw = project_measure(DiscreteMeasure([0.75, 0.25]), g2)
    got = {tuple(g2.vertices[i]): a for i, a in bw}
    assert got == {(1.0, 0.0): pytest.approx(0.5), (0.5, 0.5): pytest.approx(0.5)}


def test_projection_of_vertex_is_itself(backend):
    g = MeasureGrid(5, 4)
    for vid in range(len(g)):
        bw = project_measure(g.lookup(vid), g)
        assert bw.ids.tolist() == [vid]
        assert bw.alphas.tolist() == [1.0]


@settings(max_examples=200, deadline=None)
@given(w=st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-6),
       M=st.integers(1, 9))
def test_projection_properties(w, M):
    g = MeasureGrid(4, M)
    mu = DiscreteMeasure(np.array(w) / sum(w))
    for name in kernels.available_backends():
        kernels.set_backend(name)
        bw = project_measure(mu, g)
        assert (bw.alphas >= 0).all()
        assert bw.alphas.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(bw.reconstruct(g) - mu.weights)) <= 1e-12
        assert len(bw.ids) <= 4
    kernels.set_backend(kernels.available_backends()[0])


def _tiny_lq():
    spec = lq_problem(T=0.002, action_bound=1.0, action_count=2)
    return (spec, *setup(spec, 0.1, 0.001, 3))


def test_exact_tree_equals_exhaustive_strategies():
    for spec, params, kern, law in (_tiny_lq(), (toy_spec(), *setup(toy_spec(), 0.1, 0.001, 3))):
        assert params.n_steps == 2
        bf = brute_force_value(spec, kern, law)
        ex = exact_tree_value(spec, kern, law)
        assert abs(bf - ex) <= 1e-10


def test_grid_value_monotone_in_M(backend):
    for spec, params, kern, law in (_tiny_lq(), (toy_spec(), *setup(toy_spec(), 0.1, 0.001, 3))):
        exact = exact_tree_value(spec, kern, law)
        errs = []
        for M in (1, 2, 4, 8, 16, 32, 64, 128):
            table = backward_induction(spec, kern, law, MeasureGrid(3, M))
            errs.append(abs(table.value - exact))
        # a few ulps of slack: once the grid resolves the kinks the error is roundoff
        assert all(b <= a + 1e-14 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-14 < errs[0]


def test_dyadic_instance_is_exact_on_grid(backend):
    # p = 0 and quarter-step probabilities keep every reachable belief on the M = 16 grid
    spec = make_spec(drift=0.0, sigma=1.0, p=0.0, K=lambda t, x, a: -a * a, G=lambda x: x * x,
                     T=1.0, actions=(0.0, 1.0), bound_b=1.0, box=(-2.0, 2.0))
    params, kern, law = setup(spec, 1.0, 0.5, 5)
    assert kern.probs(0, 2, 1) == (0.25, 0.25, 0.5)
    table = backward_induction(spec, kern, law, MeasureGrid(5, 16))
    assert table.value == pytest.approx(exact_tree_value(spec, kern, law), abs=1e-14)
    assert table.value == pytest.approx(1.0, abs=1e-14)


def test_terminal_layer_and_constant_shift(backend):
    spec, params, kern, law = toy_spec(), *setup(toy_spec(), 0.1, 0.001, 3)
    grid = MeasureGrid(3, 4)
    table = backward_induction(spec, kern, law, grid)
    g = spec.reward_G(params.nodes)
    assert np.allclose(table.values[-1], grid.vertices @ g, atol=0)
    shifted = make_spec(drift=lambda t, x, a: a, p=lambda t, x: 4.0 * x,
                        K=lambda t, x, a: -0.5 * a * a,
                        G=lambda x: np.cos(9.0 * x) + 2.0 * x + 3.0,
                        T=spec.T, actions=spec.action_grid, bound_p=4.0)
    t2 = backward_induction(shifted, kern, law, grid)
    # the DPP operator preserves constants because the likelihood factors average to one
    assert np.allclose(t2.values - table.values, 3.0, atol=1e-12)
    assert np.array_equal(t2.policy, table.policy)


def test_monotone_in_terminal_reward(backend):
    spec, params, kern, law = toy_spec(), *setup(toy_spec(), 0.1, 0.001, 3)
    grid = MeasureGrid(3, 4)
    bigger = make_spec(drift=lambda t, x, a: a, p=lambda t, x: 4.0 * x,
                       K=lambda t, x, a: -0.5 * a * a,
                       G=lambda x: np.cos(9.0 * x) + 2.0 * x + 0.1 * (x + 1.0) ** 2,
                       T=spec.T, actions=spec.action_grid, bound_p=4.0)
    lo = backward_induction(spec, kern, law, grid).values
    hi = backward_induction(bigger, kern, law, grid).values
    assert (hi >= lo - 1e-14).all()


def test_ties_pick_first_action(backend):
    spec = make_spec(drift=0.0, p=0.0, T=0.002, actions=(-1.0, 0.0, 1.0), bound_b=1.0)
    params, kern, law = setup(spec, 0.1, 0.001, 3)
    table = backward_induction(spec, kern, law, MeasureGrid(3, 4))
    assert (table.policy == 0).all()


def test_null_problem_value_zero(backend):
    spec = make_spec(drift=lambda t, x, a: a, p=lambda t, x: x, T=0.01, actions=(-1.0, 1.0))
    params, kern, law = setup(spec, 0.1, 0.001, 5)
    table = backward_induction(spec, kern, law, MeasureGrid(5, 4))
    assert np.all(table.values == 0.0)


def test_threads_do_not_change_tables(lq):
    params, kern, law = setup(lq, 0.14, 0.00196, 7)
    grid = MeasureGrid(7, 4)
    a = backward_induction(lq, kern, law, grid, threads=1)
    b = backward_induction(lq, kern, law, grid, threads=3)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.policy, b.policy)


def test_backends_agree(lq):
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled backend not built")
    params, kern, law = setup(lq, 0.14, 0.00196, 7)
    grid = MeasureGrid(7, 4)
    a = backward_induction(lq, kern, law, grid, backend="cython")
    b = backward_induction(lq, kern, law, grid, backend="python")
    assert np.allclose(a.values, b.values, atol=1e-13, rtol=0)
    assert np.array_equal(a.policy, b.policy)


def test_gaussian_law_rejected(tiny_toy):
    spec, params, kern, law = tiny_toy
    with pytest.raises(InvalidProblemError):
        backward_induction(spec, kern, ObservationLaw("gaussian", params.h), MeasureGrid(3, 2))


def test_policy_lookup_on_vertices(tiny_toy):
    spec, params, kern, law = tiny_toy
    grid = MeasureGrid(3, 4)
    table = backward_induction(spec, kern, law, grid)
    pol = extract_policy(table, spec)
    got = pol.action_index(0, grid.vertices)
    assert np.array_equal(got, table.policy[0])


def test_table_roundtrip(tmp_path, tiny_toy):
    spec, params, kern, law = tiny_toy
    table = backward_induction(spec, kern, law, MeasureGrid(3, 4))
    write_tables(table, str(tmp_path), {"dx": 0.1})
    back, info = read_tables(str(tmp_path))
    assert np.array_equal(back.values, table.values)
    assert np.array_equal(back.policy, table.policy)
    assert back.start_id == table.start_id and info["dx"] == 0.1
    lines = (tmp_path / "values.csv").read_text().splitlines()
    assert lines[0] == "vertex_id,time_index,value,action_index"
    assert lines[-1].endswith(",")
