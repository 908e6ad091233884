"""Belief-simplex grid, Freudenthal interpolation and backward dynamic programming."""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InstanceTooLargeError, InvalidProblemError
from .filter import DiscreteMeasure, check_step_size, filter_update
from .lattice import ObservationLaw, TrinomialKernel
from .model import ProblemSpec

DEFAULT_VERTEX_CAP = 2_000_000


def vertex_count(K: int, M: int) -> int:
    return math.comb(M + K - 1, K - 1)


def _compositions(K, M):
    # lexicographic with the first part ascending; matches kernels.rank_counts
    if K == 1:
        yield (M,)
        return
    for c in range(M + 1):
        for rest in _compositions(K - 1, M - c):
            yield (c,) + rest


class MeasureGrid:
    """All beliefs on ``K`` nodes with weights in multiples of ``1/M``."""

    def __init__(self, K: int, M: int, cap: int = DEFAULT_VERTEX_CAP):
        if K < 1 or M < 1:
            raise InvalidProblemError("need K >= 1 and M >= 1")
        count = vertex_count(K, M)
        if count > cap:
            raise InstanceTooLargeError(
                f"belief grid with K={K}, M={M} has {count} vertices (cap {cap})", count
            )
        self.K, self.M = K, M
        self.counts = np.array(list(_compositions(K, M)), dtype=np.int64).reshape(count, K)
        self.vertices = self.counts / M
        self.rank_table = kernels.rank_table(K, M)

    def __len__(self):
        return self.counts.shape[0]

    def index(self, counts) -> int:
        c = np.asarray(counts, dtype=np.int64).reshape(1, self.K)
        if (c < 0).any() or c.sum() != self.M:
            raise InvalidProblemError(f"{c.ravel().tolist()} is not a composition of {self.M}")
        return int(kernels.rank_counts(c, self.rank_table)[0])

    def lookup(self, vid: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.vertices[vid])

    def dirac_id(self, k: int) -> int:
        c = np.zeros(self.K, dtype=np.int64)
        c[k] = self.M
        return self.index(c)


def build_measure_grid(K: int, M: int, cap: int = DEFAULT_VERTEX_CAP) -> MeasureGrid:
    return MeasureGrid(K, M, cap)


@dataclass
class BarycentricWeights:
    ids: np.ndarray
    alphas: np.ndarray

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.alphas.tolist()))

    def reconstruct(self, grid: MeasureGrid) -> np.ndarray:
        return self.alphas @ grid.vertices[self.ids]


def project_measure(mu: DiscreteMeasure, grid: MeasureGrid) -> BarycentricWeights:
    """Barycentric weights of ``mu`` in the Freudenthal triangulation of the grid.

    Zero-weight slots are dropped, so an on-grid belief yields one entry.
    """
    if len(mu) != grid.K:
        raise InvalidProblemError("measure and grid have different node counts")
    ranks, alpha = kernels.get().project(mu.weights[None, :], grid.M, grid.rank_table)
    keep = alpha[0] > 0
    return BarycentricWeights(ids=ranks[0][keep], alphas=alpha[0][keep])


@dataclass
class ValueTable:
    values: np.ndarray
    policy: np.ndarray
    grid: MeasureGrid
    start_id: int

    @property
    def n_steps(self) -> int:
        return self.policy.shape[0]

    @property
    def value(self) -> float:
        """Value at time 0 from the Dirac belief at ``x0`` (engine sign)."""
        return float(self.values[0, self.start_id])


def _require_rademacher(law: ObservationLaw):
    if law.kind != "rademacher":
        raise InvalidProblemError("the DPP recursion needs the two-point observation law")


def backward_induction(spec: ProblemSpec, kernel: TrinomialKernel, law: ObservationLaw,
                       grid: MeasureGrid, threads: int = 1, backend: str | None = None) -> ValueTable:
    """Fill the value and policy tables layer by layer, from ``T`` back to 0."""
    _require_rademacher(law)
    params = kernel.params
    if grid.K != params.node_count:
        raise InvalidProblemError("grid and lattice disagree on the node count")
    check_step_size(spec, params)
    mod = kernels.get(backend)
    n, V = params.n_steps, len(grid)
    nodes = params.nodes
    acts = np.asarray(spec.action_grid)
    values = np.empty((n + 1, V))
    policy = np.empty((n, V), dtype=np.int64)
    values[n] = grid.vertices @ spec.reward_G(nodes)
    sqrt_h = math.sqrt(params.h)
    chunks = _chunks(V, threads)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for l in range(n - 1, -1, -1):
            t = l * params.h
            pvals = np.ascontiguousarray(spec.p(t, nodes))
            kvals = np.ascontiguousarray(spec.reward_K(t, nodes[None, :], acts[:, None]))
            args = (grid.vertices, pvals, kernel.up[l], kernel.down[l], kernel.stay[l],
                    kvals, params.h, sqrt_h, values[l + 1], grid.M, grid.rank_table)
            if pool is None:
                values[l], policy[l] = mod.dpp_layer(*args)
            else:
                parts = list(pool.map(lambda c: mod.dpp_layer(*args, c[0], c[1]), chunks))
                for (lo, hi), (v, p) in zip(chunks, parts):
                    values[l, lo:hi] = v
                    policy[l, lo:hi] = p
    finally:
        if pool is not None:
            pool.shutdown()
    start = grid.dirac_id(params.node_index(spec.x0))
    return ValueTable(values=values, policy=policy, grid=grid, start_id=start)


def _chunks(V, threads):
    threads = max(1, int(threads))
    edges = np.linspace(0, V, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def exact_tree_value(spec: ProblemSpec, kernel: TrinomialKernel, law: ObservationLaw,
                     mu0: DiscreteMeasure | None = None, cap: int = 1_000_000) -> float:
    """Backward recursion over the exactly reachable beliefs (no projection)."""
    _require_rademacher(law)
    params = kernel.params
    check_step_size(spec, params)
    n, A = params.n_steps, len(spec.action_grid)
    if (2 * A) ** n > cap:
        raise InstanceTooLargeError(f"belief tree has {(2 * A) ** n} leaves (cap {cap})", (2 * A) ** n)
    if mu0 is None:
        mu0 = DiscreteMeasure.dirac(params.node_count, params.node_index(spec.x0))
    nodes = params.nodes
    g = spec.reward_G(nodes)
    etas = law.support

    def value(l, mu):
        if l == n:
            return float(mu.weights @ g)
        t = l * params.h
        p = spec.p(t, nodes)
        best = -math.inf
        for j, a in enumerate(spec.action_grid):
            q = float(mu.weights @ spec.reward_K(t, nodes, a)) * params.h
            for eta in etas:
                Z = 1.0 + float(mu.weights @ p) * eta
                q += 0.5 * Z * value(l + 1, filter_update(l, j, mu, eta, kernel, spec))
            if q > best:
                best = q
        return best

    return value(0, mu0)


def brute_force_value(spec: ProblemSpec, kernel: TrinomialKernel, law: ObservationLaw,
                      cap: int = 2_000_000) -> float:
    """Maximum of the exact reward over every observation-adapted strategy.

    A strategy assigns an action index to each observation-sign history of
    length ``0 .. n-1``; each reward is an exact sum over all joint atoms of
    signal moves and observation signs.
    """
    _require_rademacher(law)
    params = kernel.params
    n, A, h = params.n_steps, len(spec.action_grid), params.h
    histories = [s for l in range(n) for s in itertools.product((1, -1), repeat=l)]
    n_strat = A ** len(histories)
    atoms = 6 ** n
    if n_strat * atoms > cap:
        raise InstanceTooLargeError(
            f"{n_strat} strategies x {atoms} atoms exceed cap {cap}", n_strat * atoms
        )
    nodes = params.nodes
    k0 = params.node_index(spec.x0)
    sq = math.sqrt(h)
    acts = spec.action_grid
    best = -math.inf
    for choice in itertools.product(range(A), repeat=len(histories)):
        strat = dict(zip(histories, choice))
        total = 0.0
        for signs in itertools.product((1, -1), repeat=n):
            for moves in itertools.product((1, -1, 0), repeat=n):
                k, prob, L, run = k0, 0.5 ** n, 1.0, 0.0
                for i in range(n):
                    j = strat[signs[:i]]
                    up, down, stay = kernel.probs(i, k, j)
                    m = moves[i]
                    prob *= up if m == 1 else down if m == -1 else stay
                    if prob == 0.0:
                        break
                    t = i * h
                    run += float(spec.reward_K(t, nodes[k], acts[j])) * h
                    L *= 1.0 + float(spec.p(t, nodes[k])) * signs[i] * sq
                    k += m
                if prob == 0.0:
                    continue
                total += prob * L * (run + float(spec.reward_G(nodes[k])))
        if total > best:
            best = total
    return best


@dataclass
class PolicyTable:
    """Recorded argmax action indices, ``actions[l, vertex]``."""

    actions: np.ndarray
    action_grid: tuple
    grid: MeasureGrid

    def action_index(self, l: int, mu_batch: np.ndarray) -> np.ndarray:
        """Action index for each belief row: the policy of its heaviest Freudenthal vertex."""
        mu_batch = np.atleast_2d(mu_batch)
        ranks, alpha = kernels.get().project(mu_batch, self.grid.M, self.grid.rank_table)
        pick = np.argmax(alpha, axis=1)
        vid = ranks[np.arange(len(pick)), pick]
        return self.actions[l, vid]


def extract_policy(table: ValueTable, spec: ProblemSpec | None = None) -> PolicyTable:
    grid_actions = spec.action_grid if spec is not None else ()
    return PolicyTable(actions=table.policy.copy(), action_grid=grid_actions, grid=table.grid)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_tables(table: ValueTable, out_dir: str, meta: dict | None = None) -> list[str]:
    """Dump ``values.csv`` (vertex_id,time_index,value,action_index) and ``grid.json``.

    ``action_index`` is empty on the terminal layer.
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "values.csv")
    n = table.n_steps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex_id", "time_index", "value", "action_index"])
        for l in range(n + 1):
            for v in range(len(table.grid)):
                act = "" if l == n else int(table.policy[l, v])
                w.writerow([v, l, _fmt(table.values[l, v]), act])
    info = {"K": table.grid.K, "M": table.grid.M, "n_steps": n, "start_id": table.start_id}
    info.update(meta or {})
    meta_path = os.path.join(out_dir, "grid.json")
    with open(meta_path, "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [path, meta_path]


def read_tables(in_dir: str) -> tuple[ValueTable, dict]:
    with open(os.path.join(in_dir, "grid.json")) as fh:
        info = json.load(fh)
    grid = MeasureGrid(info["K"], info["M"])
    n, V = info["n_steps"], len(grid)
    values = np.empty((n + 1, V))
    policy = np.zeros((n, V), dtype=np.int64)
    with open(os.path.join(in_dir, "values.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            v, l = int(row["vertex_id"]), int(row["time_index"])
            values[l, v] = float(row["value"])
            if l < n:
                policy[l, v] = int(row["action_index"])
    return ValueTable(values=values, policy=policy, grid=grid, start_id=info["start_id"]), info
