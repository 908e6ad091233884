import numpy as np
import pytest

from poctrl import kernels
from poctrl.lattice import ObservationLaw, TrinomialKernel, make_lattice
from poctrl.model import ProblemSpec, lq_problem


def make_spec(drift=0.0, sigma=1.0, p=0.0, K=0.0, G=None, T=0.002, x0=0.0,
              actions=(0.0, 1.0), bound_b=None, bound_sigma=None, bound_p=1.0,
              box=(-1.0, 1.0)):
    """Custom problem from constants or callables."""

    def wrap3(v):
        return v if callable(v) else (lambda t, x, a: v)

    def wrap_p(v):
        return v if callable(v) else (lambda t, x: v)

    G = G if G is not None else (lambda x: 0.0)
    return ProblemSpec(
        drift=wrap3(drift),
        diffusion=wrap3(sigma),
        obs_drift=wrap_p(p),
        running_reward=wrap3(K),
        terminal_reward=G if callable(G) else (lambda x: G),
        T=T,
        x0=x0,
        action_grid=actions,
        bound_b=max((abs(a) for a in actions), default=0.0) if bound_b is None else bound_b,
        bound_sigma=1.0 if bound_sigma is None else bound_sigma,
        bound_p=bound_p,
        state_box=box,
    )


def toy_spec(T=0.002):
    """Nonlinear rewards and informative observations on two actions."""
    return make_spec(
        drift=lambda t, x, a: a,
        sigma=1.0,
        p=lambda t, x: 4.0 * x,
        K=lambda t, x, a: -0.5 * a * a,
        G=lambda x: np.cos(9.0 * x) + 2.0 * x,
        T=T,
        actions=(-1.0, 1.0),
        bound_p=4.0,
    )


def setup(spec, dx, h, node_count):
    params = make_lattice(spec, dx, h, node_count=node_count)
    kern = TrinomialKernel(spec, params)
    law = ObservationLaw("rademacher", params.h)
    return params, kern, law


@pytest.fixture
def lq():
    return lq_problem(T=0.1, x0=0.0, action_bound=3.0, action_count=7)


@pytest.fixture
def tiny_toy():
    spec = toy_spec()
    return (spec, *setup(spec, 0.1, 0.001, 3))


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    old = kernels.backend_name()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(old)


# ------------------------------------------------------- acceptance summary

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (title, True))
    _CRITERIA[n] = (title, prev[1] and not rep.failed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
