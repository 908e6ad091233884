"""Control-problem definition and the linear-quadratic benchmark instance.

Coefficient callables take ``(t, x, a)`` (``p`` takes ``(t, x)``, ``G``
takes ``x``) and must accept numpy arrays with broadcasting; scalar returns
are broadcast to the argument shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import InvalidProblemError

Coef3 = Callable[..., object]


def _bcast(value, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


@dataclass(frozen=True)
class BoundConstants:
    C1: float
    C2: float

    def __post_init__(self):
        if not (self.C1 > 0 and self.C2 > 0):
            raise InvalidProblemError("bound constants must be positive")


@dataclass(frozen=True)
class ProblemSpec:
    """A one-dimensional partially observed control problem.

    The scheme maximizes ``E[L_n (sum K h + G)]``.  When ``minimize`` is set,
    ``running_reward`` and ``terminal_reward`` are costs: the engine reads
    their negation through :meth:`reward_K` / :meth:`reward_G` and
    :meth:`report` turns the maximized value back into a minimal cost.
    """

    drift: Coef3
    diffusion: Coef3
    obs_drift: Callable[..., object]
    running_reward: Coef3
    terminal_reward: Callable[..., object]
    T: float
    x0: float
    action_grid: tuple
    bound_b: float
    bound_sigma: float
    bound_p: float
    state_box: tuple = (-1.0, 1.0)
    growth_constant: float = 1.0
    minimize: bool = False
    name: str = "custom"

    def __post_init__(self):
        grid = tuple(float(a) for a in self.action_grid)
        object.__setattr__(self, "action_grid", grid)
        if not grid:
            raise InvalidProblemError("action_grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidProblemError("action_grid must be strictly ascending")
        if not self.T > 0:
            raise InvalidProblemError(f"horizon T must be positive, got {self.T}")
        for nm in ("bound_b", "bound_sigma", "bound_p"):
            if not getattr(self, nm) >= 0:
                raise InvalidProblemError(f"{nm} must be nonnegative")
        lo, hi = self.state_box
        if not lo <= self.x0 <= hi:
            raise InvalidProblemError("x0 lies outside state_box")

    # coefficient evaluation, always float arrays of the broadcast shape
    def b(self, t, x, a):
        t, x, a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, a)))
        return _bcast(self.drift(t, x, a), t.shape)

    def sigma(self, t, x, a):
        t, x, a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, a)))
        return _bcast(self.diffusion(t, x, a), t.shape)

    def p(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        return _bcast(self.obs_drift(t, x), t.shape)

    def K(self, t, x, a):
        t, x, a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, a)))
        return _bcast(self.running_reward(t, x, a), t.shape)

    def G(self, x):
        x = np.asarray(x, dtype=float)
        return _bcast(self.terminal_reward(x), x.shape)

    @property
    def sign(self) -> float:
        return -1.0 if self.minimize else 1.0

    def reward_K(self, t, x, a):
        return self.sign * self.K(t, x, a)

    def reward_G(self, x):
        return self.sign * self.G(x)

    def report(self, value: float) -> float:
        """Convert an engine (maximized) value to the user-facing value."""
        return self.sign * value

    @property
    def constants(self) -> BoundConstants:
        c1 = self.bound_b + self.bound_sigma + self.bound_p
        return BoundConstants(C1=c1 if c1 > 0 else 1.0, C2=self.growth_constant)

    @property
    def courant_constant(self) -> float:
        s = self.bound_b ** 2 + self.bound_sigma ** 2
        return np.inf if s == 0 else 1.0 / s


@dataclass
class ValidationReport:
    sample_count: int
    max_b: float
    max_sigma: float
    max_p: float
    exceedances: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.exceedances


def validate_problem(spec: ProblemSpec, sample_count: int = 1024, rng_seed: int = 0) -> ValidationReport:
    """Spot-check the declared sup-norm bounds on a Halton sample of the box."""
    if not spec.T > 0:
        raise InvalidProblemError(f"horizon T must be positive, got {spec.T}")
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    lo, hi = spec.state_box
    u = qmc.Halton(d=3, seed=rng_seed).random(sample_count)
    t = u[:, 0] * spec.T
    x = lo + u[:, 1] * (hi - lo)
    grid = np.asarray(spec.action_grid)
    a = grid[np.minimum((u[:, 2] * len(grid)).astype(int), len(grid) - 1)]
    # include the corners exactly
    t = np.concatenate([t, [0.0, spec.T, 0.0, spec.T]])
    x = np.concatenate([x, [lo, hi, hi, lo]])
    a = np.concatenate([a, [grid[0], grid[-1], grid[0], grid[-1]]])

    vals = {
        "b": spec.b(t, x, a),
        "sigma": spec.sigma(t, x, a),
        "p": spec.p(t, x),
        "K": spec.K(t, x, a),
        "G": spec.G(x),
    }
    for nm, v in vals.items():
        bad = ~np.isfinite(v)
        if bad.any():
            i = int(np.argmax(bad))
            raise InvalidProblemError(
                f"non-finite {nm} at (t={t[i]!r}, x={x[i]!r}, a={a[i]!r})"
            )
    neg = vals["sigma"] < 0
    if neg.any():
        i = int(np.argmax(neg))
        raise InvalidProblemError(f"negative sigma at (t={t[i]!r}, x={x[i]!r}, a={a[i]!r})")

    report = ValidationReport(
        sample_count=len(t),
        max_b=float(np.max(np.abs(vals["b"]))),
        max_sigma=float(np.max(vals["sigma"])),
        max_p=float(np.max(np.abs(vals["p"]))),
    )
    for nm, observed, declared in (
        ("b", report.max_b, spec.bound_b),
        ("sigma", report.max_sigma, spec.bound_sigma),
        ("p", report.max_p, spec.bound_p),
    ):
        if observed > declared * (1 + 1e-12):
            report.exceedances.append((nm, observed, declared))
    return report


def lq_problem(
    T: float = 0.1,
    x0: float = 0.0,
    action_bound: float = 3.0,
    action_count: int = 7,
    state_bound: float = 0.49,
) -> ProblemSpec:
    """Linear-quadratic benchmark: b = a, sigma = 1, p = x, cost a^2 + x^2.

    The action set is truncated to a uniform grid on
    ``[-action_bound, action_bound]``; ``state_bound`` sets the truncated
    state box used for the bound on ``p``.
    """
    if action_bound <= 0 or action_count < 2:
        raise InvalidProblemError("need action_bound > 0 and action_count >= 2")
    box = (min(-state_bound, x0), max(state_bound, x0))
    return ProblemSpec(
        drift=lambda t, x, a: a,
        diffusion=lambda t, x, a: 1.0,
        obs_drift=lambda t, x: x,
        running_reward=lambda t, x, a: a * a,
        terminal_reward=lambda x: x * x,
        T=T,
        x0=x0,
        action_grid=tuple(np.linspace(-action_bound, action_bound, action_count)),
        bound_b=float(action_bound),
        bound_sigma=1.0,
        bound_p=float(max(abs(box[0]), abs(box[1]))),
        state_box=box,
        growth_constant=max(1.0, action_bound ** 2),
        minimize=True,
        name="lq",
    )


def null_problem(T: float = 0.1, x0: float = 0.0, action_bound: float = 3.0,
                 action_count: int = 7, state_bound: float = 0.49) -> ProblemSpec:
    """LQ dynamics and observation with identically zero rewards."""
    from dataclasses import replace

    lq = lq_problem(T, x0, action_bound, action_count, state_bound)
    return replace(
        lq,
        running_reward=lambda t, x, a: 0.0,
        terminal_reward=lambda x: 0.0,
        minimize=False,
        name="null",
    )


def zero_problem(T: float = 0.1, x0: float = 0.0, actions: Sequence[float] = (0.0, 1.0),
                 state_bound: float = 0.49) -> ProblemSpec:
    """All coefficients and rewards identically zero."""
    return ProblemSpec(
        drift=lambda t, x, a: 0.0,
        diffusion=lambda t, x, a: 0.0,
        obs_drift=lambda t, x: 0.0,
        running_reward=lambda t, x, a: 0.0,
        terminal_reward=lambda x: 0.0,
        T=T,
        x0=x0,
        action_grid=tuple(actions),
        bound_b=0.0,
        bound_sigma=0.0,
        bound_p=0.0,
        state_box=(min(-state_bound, x0), max(state_bound, x0)),
        name="zero",
    )


BUILTIN_PROBLEMS = {"lq": lq_problem, "null": null_problem, "zero": zero_problem}
