import numpy as np
import pytest

from poctrl.errors import InvalidProblemError
from poctrl.model import BoundConstants, lq_problem, validate_problem, zero_problem

from conftest import make_spec


def test_lq_problem_coefficients():
    spec = lq_problem(T=0.1, x0=0.0, action_bound=3, action_count=7)
    assert spec.action_grid == (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    assert spec.b(0.05, 0.2, 1.0) == 1.0
    assert spec.sigma(0.0, 0.3, -2.0) == 1.0
    assert spec.p(0.0, 0.3) == 0.3
    assert spec.G(0.2) == pytest.approx(0.04, abs=1e-17)
    assert spec.G(-0.3) == pytest.approx(0.09, abs=1e-17)
    t = np.linspace(0, 0.1, 11)
    x = np.linspace(-0.49, 0.49, 11)
    assert np.all(spec.K(t[:, None], x[None, :], 0.0) == 0.0)


def test_lq_rewards_are_negated_for_the_engine():
    spec = lq_problem()
    assert spec.minimize
    assert spec.reward_G(0.2) == -spec.G(0.2)
    assert spec.reward_K(0.0, 0.1, 2.0) == -4.0
    assert spec.report(-0.07) == 0.07


def test_validate_lq_passes_on_truncated_box():
    rep = validate_problem(lq_problem(), sample_count=500, rng_seed=1)
    assert rep.passed
    assert rep.max_b == 3.0
    assert rep.max_sigma == 1.0
    assert rep.max_p == pytest.approx(0.49)


@pytest.mark.parametrize("T,bound", [(0.1, 3.0), (0.5, 1.0), (1.0, 2.5), (0.01, 0.5)])
def test_lq_passes_validation_for_all_pairs(T, bound):
    assert validate_problem(lq_problem(T=T, action_bound=bound), 200, 0).passed


def test_zero_problem_has_zero_maxima():
    rep = validate_problem(zero_problem(), 100, 0)
    assert rep.passed
    assert (rep.max_b, rep.max_sigma, rep.max_p) == (0.0, 0.0, 0.0)


def test_zero_horizon_rejected():
    with pytest.raises(InvalidProblemError):
        lq_problem(T=0.0)


def test_bound_exceedance_is_flagged():
    spec = make_spec(drift=lambda t, x, a: 2.0 * a, actions=(0.0, 1.0), bound_b=1.0)
    rep = validate_problem(spec, 64, 0)
    assert not rep.passed
    assert rep.exceedances[0][0] == "b"


def test_non_finite_coefficient_names_point():
    spec = make_spec(p=lambda t, x: np.where(x > 0.5, np.nan, x))
    with pytest.raises(InvalidProblemError, match=r"non-finite p at \(t="):
        validate_problem(spec, 64, 0)


def test_action_grid_must_ascend():
    with pytest.raises(InvalidProblemError):
        make_spec(actions=(1.0, 0.0))
    with pytest.raises(InvalidProblemError):
        make_spec(actions=())


def test_bound_constants_positive():
    with pytest.raises(InvalidProblemError):
        BoundConstants(C1=0.0, C2=1.0)
    assert lq_problem().constants.C2 == 9.0


def test_evaluation_is_deterministic():
    spec = lq_problem()
    t, x, a = np.random.default_rng(0).random((3, 100))
    for f in (spec.b, spec.sigma, spec.K):
        assert np.array_equal(f(t, x, a), f(t, x, a))
    assert np.array_equal(spec.G(x), spec.G(x))
