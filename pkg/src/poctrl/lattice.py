"""Trinomial signal lattice, observation increments and local-consistency checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CourantViolationError, DegenerateProblemError, InvalidProblemError
from .model import ProblemSpec

# relative slack on grid-alignment and Courant comparisons
_TOL = 1e-9


def derive_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``stream`` under a root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


@dataclass(frozen=True)
class LatticeParams:
    dx: float
    h: float
    n_steps: int
    x_min: float
    x_max: float
    T: float

    def __post_init__(self):
        if not (self.dx > 0 and self.h > 0):
            raise InvalidProblemError("dx and h must be positive")
        span = (self.x_max - self.x_min) / self.dx
        if span < 0 or abs(span - round(span)) > _TOL * max(1.0, span):
            raise InvalidProblemError(
                f"(x_max - x_min)/dx = {span!r} is not a nonnegative integer"
            )
        if abs(self.h * self.n_steps - self.T) > 4 * np.spacing(self.T):
            raise InvalidProblemError("h * n_steps must equal T")

    @property
    def node_count(self) -> int:
        return int(round((self.x_max - self.x_min) / self.dx)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.node_count)

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.n_steps + 1)

    def node_index(self, x: float) -> int:
        k = (x - self.x_min) / self.dx
        if abs(k - round(k)) > _TOL * max(1.0, abs(k)) or not 0 <= round(k) < self.node_count:
            raise InvalidProblemError(f"{x!r} is not a lattice node")
        return int(round(k))


def steps_for(T: float, h: float) -> tuple[float, int]:
    """Shrink ``h`` to the nearest value with ``T / h`` integral."""
    n = max(1, math.ceil(T / h * (1 - 1e-12)))
    return T / n, n


def courant_step(spec: ProblemSpec, dx: float, safety_ratio: float = 1.0) -> float:
    """Largest ``h = ratio * dx^2 / (|b|^2 + |sigma|^2)`` dividing ``T``."""
    if dx <= 0:
        raise InvalidProblemError("dx must be positive")
    if not 0 < safety_ratio <= 1:
        raise InvalidProblemError("safety_ratio must lie in (0, 1]")
    s = spec.bound_b ** 2 + spec.bound_sigma ** 2
    if s == 0:
        raise DegenerateProblemError("bound_b and bound_sigma are both zero")
    h, _ = steps_for(spec.T, safety_ratio * dx * dx / s)
    return h


def make_lattice(spec: ProblemSpec, dx: float, h: float, x_min: float | None = None,
                 x_max: float | None = None, node_count: int | None = None) -> LatticeParams:
    """Lattice with spacing ``dx`` containing ``x0`` as a node.

    Either pass both endpoints or a ``node_count``; with a count the grid is
    centred on ``x0`` (odd counts) or puts ``x0`` just left of centre.
    ``h`` is shrunk so that it divides ``T``.
    """
    if node_count is not None:
        if node_count < 1:
            raise InvalidProblemError("node_count must be positive")
        left = (node_count - 1) // 2
        x_min = spec.x0 - left * dx
        x_max = x_min + (node_count - 1) * dx
    elif x_min is None or x_max is None:
        raise InvalidProblemError("give x_min and x_max, or node_count")
    if not x_min - _TOL * dx <= spec.x0 <= x_max + _TOL * dx:
        raise InvalidProblemError("x0 must lie in [x_min, x_max]")
    h, n = steps_for(spec.T, h)
    if h > spec.courant_constant * dx * dx * (1 + _TOL):
        raise CourantViolationError(
            f"h={h:.6g} exceeds C0*dx^2={spec.courant_constant * dx * dx:.6g}"
        )
    params = LatticeParams(dx=dx, h=h, n_steps=n, x_min=x_min, x_max=x_max, T=spec.T)
    k0 = (spec.x0 - x_min) / dx
    if abs(k0 - round(k0)) > _TOL * max(1.0, abs(k0)):
        raise InvalidProblemError("x0 is not a lattice node")
    return params


def _raw_probs(b, sig, h, dx):
    a = 0.5 * (sig * sig + h * b * b) * h / (dx * dx)
    c = 0.5 * b * h / dx
    return a + c, a - c


def trinomial_probs(spec: ProblemSpec, params: LatticeParams, i: int, k: int, a: float):
    """Unclamped three-point law at node ``k``, time step ``i``, action ``a``."""
    if not (0 <= i <= params.n_steps and 0 <= k < params.node_count):
        raise IndexError(f"(i={i}, k={k}) outside the lattice")
    t, x = i * params.h, params.x_min + k * params.dx
    b = float(spec.b(t, x, a))
    s = float(spec.sigma(t, x, a))
    up, down = _raw_probs(b, s, params.h, params.dx)
    zero = 1.0 - up - down
    for nm, v in (("p_plus", up), ("p_minus", down), ("p_zero", zero)):
        if not -1e-15 <= v <= 1 + 1e-15:
            raise CourantViolationError(
                f"{nm}={v!r} outside [0,1] at (i={i}, x={x!r}, a={a!r}); h too large for dx"
            )
    return up, down, zero


class TrinomialKernel:
    """Tabulated transition probabilities on the truncated lattice.

    ``up``, ``down`` and ``stay`` have shape ``(n_steps, n_actions, K)``.
    At the end nodes the mass of the outward move is folded into ``stay``.
    ``raw_up``/``raw_down`` keep the unclamped values.
    """

    def __init__(self, spec: ProblemSpec, params: LatticeParams):
        self.spec = spec
        self.params = params
        n, K = params.n_steps, params.node_count
        acts = np.asarray(spec.action_grid)
        t = params.times[:n][:, None, None]
        x = params.nodes[None, None, :]
        a = acts[None, :, None]
        b = spec.b(t, x, a)
        s = spec.sigma(t, x, a)
        up, down = _raw_probs(b, s, params.h, params.dx)
        zero = 1.0 - up - down
        bad = (up < -1e-15) | (down < -1e-15) | (zero < -1e-15)
        if bad.any():
            i, j, k = (int(v[0]) for v in np.nonzero(bad))
            raise CourantViolationError(
                f"probabilities outside [0,1] at (i={i}, x={params.nodes[k]!r}, "
                f"a={acts[j]!r}): p+={up[i, j, k]!r}, p-={down[i, j, k]!r}"
            )
        self.raw_up = np.ascontiguousarray(np.clip(up, 0.0, 1.0))
        self.raw_down = np.ascontiguousarray(np.clip(down, 0.0, 1.0))
        self.up = self.raw_up.copy()
        self.down = self.raw_down.copy()
        self.up[:, :, K - 1] = 0.0
        self.down[:, :, 0] = 0.0
        self.stay = 1.0 - self.up - self.down
        self.drift = np.ascontiguousarray(b)
        self.diffusion = np.ascontiguousarray(s)

    @property
    def n_actions(self) -> int:
        return len(self.spec.action_grid)

    def probs(self, i: int, k: int, j: int):
        """Clamped ``(p_plus, p_minus, p_zero)`` for action index ``j``."""
        return float(self.up[i, j, k]), float(self.down[i, j, k]), float(self.stay[i, j, k])

    def matrix(self, i: int, j: int) -> np.ndarray:
        """Dense ``K x K`` row-stochastic transition matrix."""
        K = self.params.node_count
        P = np.diag(self.stay[i, j])
        idx = np.arange(K - 1)
        P[idx, idx + 1] = self.up[i, j, :-1]
        P[idx + 1, idx] = self.down[i, j, 1:]
        return P


@dataclass
class ConsistencyRow:
    i: int
    k: int
    j: int
    mean_error: float
    var_error: float
    third_ratio: float
    exp_ratios: tuple


@dataclass
class ConsistencyReport:
    rows: list = field(default_factory=list)
    third_bound: float = 0.0
    exp_bounds: tuple = ()
    exp_cs: tuple = ()
    tol: float = 1e-12
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def max_third_ratio(self) -> float:
        return max((r.third_ratio for r in self.rows), default=0.0)


def check_local_consistency(spec: ProblemSpec, kernel: TrinomialKernel, sample_nodes,
                            tol: float = 1e-12) -> ConsistencyReport:
    """Exact moment identities of the clamped kernel at ``(i, k, j)`` triples.

    Mean and variance must match ``b h`` and ``sigma^2 h`` to ``tol``.  The
    third absolute moment over ``h^{3/2}`` and the exponential moment excess
    over ``h`` must stay under the envelopes implied by the declared bounds.
    """
    params = kernel.params
    h, dx = params.h, params.dx
    cs = (1.0, float(spec.growth_constant))
    spread = spec.bound_sigma ** 2 + h * spec.bound_b ** 2
    third_bound = spread * dx / math.sqrt(h) * (1 + 1e-9) + 1e-300
    exp_bounds = tuple(spread * math.expm1(c * dx) / (dx * dx) * (1 + 1e-9) + 1e-300 for c in cs)
    rep = ConsistencyReport(third_bound=third_bound, exp_bounds=exp_bounds, exp_cs=cs, tol=tol)
    for i, k, j in sample_nodes:
        up, down, _ = kernel.probs(i, k, j)
        b = kernel.drift[i, j, k]
        s = kernel.diffusion[i, j, k]
        mean = dx * (up - down)
        second = dx * dx * (up + down)
        var = second - mean * mean
        third = dx ** 3 * (up + down)
        row = ConsistencyRow(
            i=i, k=k, j=j,
            mean_error=abs(mean - b * h),
            var_error=abs(var - s * s * h),
            third_ratio=third / h ** 1.5,
            exp_ratios=tuple((up + down) * math.expm1(c * dx) / h for c in cs),
        )
        rep.rows.append(row)
        if row.mean_error > tol:
            rep.failures.append((i, k, j, "mean", row.mean_error))
        if row.var_error > tol:
            rep.failures.append((i, k, j, "variance", row.var_error))
        if not row.third_ratio <= third_bound:
            rep.failures.append((i, k, j, "third", row.third_ratio))
        for c, r, cap in zip(cs, row.exp_ratios, exp_bounds):
            if not r <= cap:
                rep.failures.append((i, k, j, f"exp(c={c})", r))
    return rep


def sample_signal_increment(kernel: TrinomialKernel, i: int, k: int, j: int,
                            rng: np.random.Generator) -> float:
    up, down, _ = kernel.probs(i, k, j)
    u = rng.random()
    if u < up:
        return kernel.params.dx
    if u < up + down:
        return -kernel.params.dx
    return 0.0


@dataclass(frozen=True)
class ObservationLaw:
    kind: str
    h: float

    def __post_init__(self):
        if self.kind not in ("rademacher", "gaussian"):
            raise ValueError(f"unknown observation law {self.kind!r}")
        if not self.h > 0:
            raise ValueError("h must be positive")

    @property
    def support(self) -> tuple:
        if self.kind != "rademacher":
            raise ValueError("gaussian law has no finite support")
        r = math.sqrt(self.h)
        return (r, -r)

    @property
    def mean(self) -> float:
        return 0.0

    @property
    def variance(self) -> float:
        return self.h

    @property
    def third_abs_moment(self) -> float:
        if self.kind == "rademacher":
            return self.h ** 1.5
        return 2.0 * math.sqrt(2.0 / math.pi) * self.h ** 1.5

    def sample(self, rng: np.random.Generator, size=None):
        r = math.sqrt(self.h)
        if self.kind == "rademacher":
            signs = rng.integers(0, 2, size=size)
            return r * (1 - 2 * signs) if size is not None else r * (1 - 2 * int(signs))
        return rng.normal(0.0, r, size=size)


def sample_obs_increment(law: ObservationLaw, rng: np.random.Generator) -> float:
    return float(law.sample(rng))
