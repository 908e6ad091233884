"""Discrete nonlinear filter on the lattice and its enumeration oracle."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InstanceTooLargeError, InvalidProblemError, StepSizeError
from .lattice import LatticeParams, ObservationLaw, TrinomialKernel
from .model import ProblemSpec

_SUM_TOL = 1e-12


class DiscreteMeasure:
    """Probability weights over the lattice nodes (immutable)."""

    __slots__ = ("weights",)

    def __init__(self, weights, check: bool = True):
        w = np.array(weights, dtype=float)
        if check:
            if w.ndim != 1 or w.size == 0:
                raise InvalidProblemError("weights must be a nonempty vector")
            if (w < 0).any() or not np.isfinite(w).all():
                raise InvalidProblemError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > _SUM_TOL:
                raise InvalidProblemError(f"weights sum to {w.sum()!r}, not 1")
        w.flags.writeable = False
        self.weights = w

    @classmethod
    def dirac(cls, node_count: int, k: int) -> "DiscreteMeasure":
        w = np.zeros(node_count)
        w[k] = 1.0
        return cls(w)

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        return isinstance(other, DiscreteMeasure) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __repr__(self):
        return f"DiscreteMeasure({np.array2string(self.weights, precision=6)})"


def integrate(mu: DiscreteMeasure, f) -> float:
    """``sum_k mu_k f_k``; ``f`` is an array of node values or a callable on nodes."""
    return float(np.dot(mu.weights, np.asarray(f, dtype=float)))


@dataclass(frozen=True)
class LambdaState:
    value: float = 1.0


def _pvals(spec: ProblemSpec, params: LatticeParams, l: int) -> np.ndarray:
    return np.ascontiguousarray(spec.p(l * params.h, params.nodes), dtype=float)


def check_step_size(spec: ProblemSpec, params: LatticeParams) -> None:
    """Require ``sqrt(h) * max|p| < 1`` on the lattice so that every likelihood factor is positive."""
    pmax = max(
        float(np.max(np.abs(spec.p(t, params.nodes)))) for t in params.times[:-1]
    ) if params.n_steps else 0.0
    if math.sqrt(params.h) * pmax >= 1.0:
        raise StepSizeError(
            f"sqrt(h)*max|p| = {math.sqrt(params.h) * pmax:.4g} >= 1; reduce h"
        )


def lambda_update(lam: LambdaState, mu: DiscreteMeasure, t_l: float, eta: float,
                  spec: ProblemSpec, params: LatticeParams) -> LambdaState:
    factor = 1.0 + integrate(mu, spec.p(t_l, params.nodes)) * eta
    if not factor > 0:
        raise StepSizeError(f"normalizer 1 + mu(p) eta = {factor!r} is not positive")
    return LambdaState(lam.value * factor)


def filter_update(l: int, j: int, mu: DiscreteMeasure, eta: float,
                  kernel: TrinomialKernel, spec: ProblemSpec) -> DiscreteMeasure:
    """Posterior over nodes at step ``l + 1`` after action index ``j`` and increment ``eta``."""
    params = kernel.params
    p = _pvals(spec, params, l)
    factors = 1.0 + p * eta
    if (factors[mu.weights > 0] <= 0).any():
        raise StepSizeError("a likelihood factor 1 + p eta is nonpositive")
    mod = kernels.get()
    out, Z = mod.filter_step(
        mu.weights[None, :], p, kernel.up[l], kernel.down[l], kernel.stay[l],
        np.array([j], dtype=np.int64), np.array([eta]),
    )
    if not Z[0] > 0:
        raise StepSizeError(f"normalizer 1 + mu(p) eta = {Z[0]!r} is not positive")
    return DiscreteMeasure(out[0], check=False)


@dataclass
class FilterOracleEntry:
    lam: float
    mu: np.ndarray
    unnormalized: np.ndarray


def brute_force_filter(spec: ProblemSpec, kernel: TrinomialKernel, law: ObservationLaw,
                       policy, n_steps: int, mu0: DiscreteMeasure | None = None,
                       cap: int = 200_000) -> dict:
    """Exact conditional laws by enumerating every joint path.

    ``policy`` maps an observation-sign history (tuple of +1/-1, length l)
    to an action index.  For each history of length ``l <= n_steps`` the
    result holds ``lam`` (conditional mean of the likelihood), the filter
    ``mu`` and the unnormalized masses ``E[L_l 1{X_l = x_k} | history]``.
    """
    if law.kind != "rademacher":
        raise InvalidProblemError("enumeration needs the two-point observation law")
    params = kernel.params
    K, h = params.node_count, params.h
    if mu0 is None:
        mu0 = DiscreteMeasure.dirac(K, params.node_index(spec.x0))
    if n_steps > params.n_steps:
        raise InvalidProblemError("n_steps exceeds the lattice horizon")
    starts = [k for k in range(K) if mu0.weights[k] > 0]
    atoms = len(starts) * 6 ** n_steps
    if atoms > cap:
        raise InstanceTooLargeError(f"{atoms} path atoms exceed cap {cap}", atoms)
    sq = math.sqrt(h)
    nodes = params.nodes
    result = {}
    for length in range(n_steps + 1):
        for signs in itertools.product((1, -1), repeat=length):
            rho = np.zeros(K)
            for k0 in starts:
                for moves in itertools.product((1, -1, 0), repeat=length):
                    x_idx = k0
                    prob = mu0.weights[k0]
                    L = 1.0
                    for i in range(length):
                        a_j = policy(signs[:i])
                        up, down, stay = kernel.probs(i, x_idx, a_j)
                        m = moves[i]
                        step_p = up if m == 1 else down if m == -1 else stay
                        if step_p == 0.0:
                            prob = 0.0
                            break
                        prob *= step_p
                        L *= 1.0 + float(spec.p(i * h, nodes[x_idx])) * signs[i] * sq
                        x_idx += m
                    if prob == 0.0:
                        continue
                    rho[x_idx] += prob * L
            lam = rho.sum()
            result[signs] = FilterOracleEntry(lam=lam, mu=rho / lam, unnormalized=rho)
    return result
