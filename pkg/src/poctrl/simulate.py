"""Forward Monte Carlo of the discrete scheme, Taylor residuals, and the LQ reference."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import kernels
from .errors import InvalidProblemError, StepSizeError
from .lattice import ObservationLaw, TrinomialKernel, derive_rng
from .model import ProblemSpec

CHUNK = 8192


# ---------------------------------------------------------------- policies

class ConstantPolicy:
    def __init__(self, index: int):
        self.index = int(index)

    def action_index(self, l, mu_batch):
        return np.full(len(mu_batch), self.index, dtype=np.int64)


def _as_policy(policy):
    if hasattr(policy, "action_index"):
        return policy.action_index
    return policy


# ------------------------------------------------------- discrete simulation

@dataclass
class PathBundle:
    seed: int
    path_count: int
    terminal_L: np.ndarray
    samples: np.ndarray
    X: np.ndarray | None = None
    Y: np.ndarray | None = None
    L: np.ndarray | None = None
    actions: np.ndarray | None = None


@dataclass
class MCEstimate:
    estimate: float
    std_error: float
    path_count: int
    bundle: PathBundle

    def __iter__(self):
        return iter((self.estimate, self.std_error, self.bundle))


def _simulate_chunk(spec, kernel, law, policy, size, rng, record):
    params = kernel.params
    mod = kernels.get()
    n, K = params.n_steps, params.node_count
    nodes = params.nodes
    acts = np.asarray(spec.action_grid)
    k = np.full(size, params.node_index(spec.x0), dtype=np.int64)
    mu = np.zeros((size, K))
    mu[np.arange(size), k] = 1.0
    L = np.ones(size)
    Y = np.zeros(size)
    run = np.zeros(size)
    rec = None
    if record:
        rec = {nm: np.empty((size, n + 1)) for nm in ("X", "Y", "L")}
        rec["a"] = np.full((size, n + 1), -1, dtype=np.int64)
        rec["X"][:, 0], rec["Y"][:, 0], rec["L"][:, 0] = nodes[k], 0.0, 1.0
    for l in range(n):
        t = l * params.h
        j = np.asarray(policy(l, mu), dtype=np.int64)
        x = nodes[k]
        run += spec.reward_K(t, x, acts[j]) * params.h
        eta = np.asarray(law.sample(rng, size=size), dtype=float)
        pvals = np.ascontiguousarray(spec.p(t, nodes))
        factor = 1.0 + pvals[k] * eta
        if (factor <= 0).any():
            bad = int(np.argmax(factor <= 0))
            raise StepSizeError(f"likelihood factor nonpositive on path {bad} at step {l}")
        L *= factor
        mu, _ = mod.filter_step(mu, pvals, kernel.up[l], kernel.down[l], kernel.stay[l], j, eta)
        u = rng.random(size)
        up = kernel.up[l][j, k]
        down = kernel.down[l][j, k]
        k = k + (u < up) - ((u >= up) & (u < up + down))
        Y += eta
        if record:
            rec["X"][:, l + 1], rec["Y"][:, l + 1], rec["L"][:, l + 1] = nodes[k], Y, L
            rec["a"][:, l] = j
    samples = L * (run + spec.reward_G(nodes[k]))
    return samples, L, rec


def simulate_discrete_paths(spec: ProblemSpec, kernel: TrinomialKernel, law: ObservationLaw,
                            policy, path_count: int, seed: int = 0, threads: int = 1,
                            record: bool = False) -> MCEstimate:
    """Monte Carlo estimate of the discrete reward under the reference measure.

    ``policy`` is a :class:`~poctrl.dpp.PolicyTable`, a :class:`ConstantPolicy`
    or any callable ``(l, beliefs) -> action indices``.  Beliefs are carried
    by the exact filter along each path.  Paths are generated in fixed chunks,
    one random stream per chunk, so results do not depend on ``threads``.
    """
    if path_count < 1:
        raise ValueError("path_count must be positive")
    pol = _as_policy(policy)
    sizes = [min(CHUNK, path_count - s) for s in range(0, path_count, CHUNK)]

    def work(c):
        return _simulate_chunk(spec, kernel, law, pol, sizes[c], derive_rng(seed, c), record)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(c) for c in range(len(sizes))]
    samples = np.concatenate([p[0] for p in parts])
    bad = ~np.isfinite(samples)
    if bad.any():
        raise InvalidProblemError(f"non-finite reward on path {int(np.argmax(bad))}")
    bundle = PathBundle(seed=seed, path_count=path_count,
                        terminal_L=np.concatenate([p[1] for p in parts]), samples=samples)
    if record:
        bundle.X = np.concatenate([p[2]["X"] for p in parts])
        bundle.Y = np.concatenate([p[2]["Y"] for p in parts])
        bundle.L = np.concatenate([p[2]["L"] for p in parts])
        bundle.actions = np.concatenate([p[2]["a"] for p in parts])
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(path_count)) if path_count > 1 else 0.0
    return MCEstimate(estimate=est, std_error=se, path_count=path_count, bundle=bundle)


def write_paths_csv(bundle: PathBundle, path: str) -> None:
    """CSV columns: path_id, step, X, Y, L, action (empty at the final step)."""
    if bundle.X is None:
        raise ValueError("bundle was simulated without record=True")
    with open(path, "w") as fh:
        fh.write("path_id,step,X,Y,L,action\n")
        N, n1 = bundle.X.shape
        for p in range(N):
            for i in range(n1):
                a = bundle.actions[p, i]
                fh.write(f"{p},{i},{bundle.X[p, i]:.17g},{bundle.Y[p, i]:.17g},"
                         f"{bundle.L[p, i]:.17g},{'' if a < 0 else a}\n")


# ------------------------------------------------------------ Taylor residual

@dataclass
class SmoothFunction:
    """Test function with its partial derivatives, all called as ``(t, x)``."""

    value: Callable
    dt: Callable
    dx: Callable
    dxx: Callable


def martingale_residual(spec: ProblemSpec, kernel: TrinomialKernel, f: SmoothFunction,
                        i: int, k: int, j: int, exact: bool = True) -> float:
    """One-step residual ``E[f(t+h, x+H)] - f(t, x) - h * Lf(t, x)``.

    The generator is ``Lf = f_t + b f_x + sigma^2 f_xx / 2``.  With ``exact``
    the finite sum is carried out in rational arithmetic on the float inputs
    (``f`` must then accept :class:`fractions.Fraction`), so the only rounding
    is the final conversion.
    """
    params = kernel.params
    last = params.node_count - 1
    b = float(kernel.drift[i, j, k])
    s = float(kernel.diffusion[i, j, k])
    if exact:
        F = Fraction
        h, dx, t = F(params.h), F(params.dx), F(i) * F(params.h)
        x = F(params.x_min) + k * F(params.dx)
        b, s = F(b), F(s)
        spread = (s * s + h * b * b) * h / (dx * dx) / 2
        up, down = spread + b * h / dx / 2, spread - b * h / dx / 2
    else:
        h, dx, t = params.h, params.dx, i * params.h
        x = params.x_min + k * params.dx
        up, down = float(kernel.raw_up[i, j, k]), float(kernel.raw_down[i, j, k])
    if k == last:
        up = 0 * up
    if k == 0:
        down = 0 * down
    stay = 1 - up - down
    f0 = f.value(t, x)
    terms = [up * (f.value(t + h, x + dx) - f0),
             down * (f.value(t + h, x - dx) - f0),
             stay * (f.value(t + h, x) - f0),
             -(f.dt(t, x) + b * f.dx(t, x) + s * s * f.dxx(t, x) / 2) * h]
    if exact:
        return float(sum(terms, Fraction(0)))
    return math.fsum(terms)


# ------------------------------------------------------------ LQ reference

@dataclass
class ODECurve:
    t: np.ndarray
    y: np.ndarray
    rhs: Callable

    def __post_init__(self):
        self._spline = None
        if len(self.t) > 1:
            self._spline = CubicHermiteSpline(self.t, self.y, self.rhs(self.y))

    def __call__(self, s):
        if self._spline is None:
            return np.full(np.shape(s), self.y[0]) if np.ndim(s) else float(self.y[0])
        out = self._spline(s)
        return out if np.ndim(s) else float(out)


def _rk4(rhs, y0, dt, steps):
    y = np.empty(steps + 1)
    y[0] = y0
    for m in range(steps):
        v = y[m]
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * dt * k1)
        k3 = rhs(v + 0.5 * dt * k2)
        k4 = rhs(v + dt * k3)
        y[m + 1] = v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _riccati_rhs(y):
    return y * y


def _variance_rhs(y):
    return 1.0 - y * y


def solve_riccati(T: float, ode_steps: int = 1000) -> ODECurve:
    """Backward RK4 for ``Pi' = Pi^2``, ``Pi(T) = 1``."""
    if ode_steps < 100:
        raise ValueError("ode_steps must be at least 100")
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return ODECurve(np.array([0.0]), np.array([1.0]), _riccati_rhs)
    t = np.linspace(0.0, T, ode_steps + 1)
    back = _rk4(_riccati_rhs, 1.0, -T / ode_steps, ode_steps)
    return ODECurve(t, back[::-1].copy(), _riccati_rhs)


def solve_variance(T: float, ode_steps: int = 1000) -> ODECurve:
    """Forward RK4 for ``P' = 1 - P^2``, ``P(0) = 0``."""
    if ode_steps < 100:
        raise ValueError("ode_steps must be at least 100")
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return ODECurve(np.array([0.0]), np.array([0.0]), _variance_rhs)
    t = np.linspace(0.0, T, ode_steps + 1)
    return ODECurve(t, _rk4(_variance_rhs, 0.0, T / ode_steps, ode_steps), _variance_rhs)


@dataclass
class LQReference:
    Pi: ODECurve
    P: ODECurve
    value_estimate: float
    ci_halfwidth: float
    std_error: float
    path_count: int
    euler_steps: int

    Z = 3.0


def _lq_chunk(T, x0, size, steps, pi, var, rng):
    dt = T / steps
    sq = math.sqrt(dt)
    X = np.full(size, float(x0))
    yhat = np.full(size, float(x0))
    cost = np.zeros(size)
    for m in range(steps):
        u = -pi[m] * yhat
        cost += u * u * dt
        dB = rng.standard_normal(size) * sq
        dW = rng.standard_normal(size) * sq
        dY = X * dt + dW
        X += u * dt + dB
        yhat += -(pi[m] + var[m]) * yhat * dt + var[m] * dY
    return cost + X * X


def lq_reference_value(T: float = 0.1, x0: float = 0.0, path_count: int = 10 ** 6,
                       euler_steps: int = 10 ** 4, seed: int = 0, ode_steps: int | None = None,
                       threads: int = 1, chunk: int = 1 << 16) -> LQReference:
    """Closed-loop Monte Carlo cost of the separated LQ feedback ``u = -Pi yhat``.

    Simulated under the physical measure with Euler-Maruyama; the filter
    ``yhat`` is driven by the simulated observation increments.  Returns the
    mean cost with a 3-sigma confidence half-width.
    """
    ode_steps = max(100, euler_steps if ode_steps is None else ode_steps)
    Pi = solve_riccati(T, ode_steps)
    P = solve_variance(T, ode_steps)
    if T == 0:
        return LQReference(Pi, P, float(x0) ** 2, 0.0, 0.0, path_count, euler_steps)
    grid = np.linspace(0.0, T, euler_steps + 1)[:-1]
    pi_v = Pi.y[:-1] if ode_steps == euler_steps else Pi(grid)
    var_v = P.y[:-1] if ode_steps == euler_steps else P(grid)
    sizes = [min(chunk, path_count - s) for s in range(0, path_count, chunk)]

    def work(c):
        return _lq_chunk(T, x0, sizes[c], euler_steps, pi_v, var_v, derive_rng(seed, c))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(c) for c in range(len(sizes))]
    costs = np.concatenate(parts)
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(path_count)) if path_count > 1 else 0.0
    return LQReference(Pi, P, mean, LQReference.Z * se, se, path_count, euler_steps)
