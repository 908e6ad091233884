"""Time the compiled kernels against the numpy fallback on a desk-scale LQ layer.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import math
import timeit

import numpy as np

from poctrl import kernels
from poctrl.dpp import MeasureGrid
from poctrl.lattice import TrinomialKernel, make_lattice
from poctrl.model import lq_problem


def cases(K=7, M=8, dx=0.14):
    spec = lq_problem(T=0.1)
    params = make_lattice(spec, dx, 0.1 * dx * dx, node_count=K)
    kern = TrinomialKernel(spec, params)
    grid = MeasureGrid(K, M)
    nodes = params.nodes
    acts = np.asarray(spec.action_grid)
    h = params.h
    pvals = np.ascontiguousarray(spec.p(0.0, nodes))
    kvals = np.ascontiguousarray(spec.reward_K(0.0, nodes[None, :], acts[:, None]))
    vnext = grid.vertices @ spec.reward_G(nodes)
    rng = np.random.default_rng(0)
    mu = rng.dirichlet(np.ones(K), size=20000)
    j = rng.integers(0, len(acts), mu.shape[0])
    eta = rng.choice([-math.sqrt(h), math.sqrt(h)], mu.shape[0])
    layer = (grid.vertices, pvals, kern.up[0], kern.down[0], kern.stay[0], kvals, h,
             math.sqrt(h), vnext, M, grid.rank_table)
    return {
        f"dpp_layer ({len(grid)} vertices)": lambda m: m.dpp_layer(*layer),
        f"project ({mu.shape[0]} beliefs)": lambda m: m.project(mu, M, grid.rank_table),
        f"filter_step ({mu.shape[0]} beliefs)": lambda m: m.filter_step(
            mu, pvals, kern.up[0], kern.down[0], kern.stay[0], j, eta),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = kernels.available_backends()
    if len(names) < 2:
        print("compiled backend not built; only the fallback is available")
    print(f"{'kernel':<30}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases().items():
        times = []
        for n in names:
            mod = kernels.get(n)
            fn(mod)
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        line = f"{label:<30}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[-1] / times[0]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
