"""Command-line front end: ``poctrl {check,solve,simulate,lq-ref,converge}``.

Exit codes: 0 success, 1 validation or consistency failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import dpp, lattice, model, simulate
from .errors import ConfigError, CourantViolationError, InstanceTooLargeError, PoctrlError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "POCTRL_SEED"


@dataclass
class RunConfig:
    problem: str = "lq"
    T: float = 0.1
    x0: float = 0.0
    dx: list = field(default_factory=lambda: [0.14, 0.098, 0.07])
    h_ratio: float = 0.1
    node_count: int | None = 7
    x_min: float | None = None
    x_max: float | None = None
    M: int = 8
    action_bound: float = 3.0
    action_count: int = 7
    state_bound: float = 0.49
    mc_paths: int = 100_000
    seed: int = 0
    ref_paths: int = 1_000_000
    euler_steps: int = 10_000
    ode_steps: int = 1000
    out: str = "out"
    self_convergence: bool = False
    max_vertices: int = dpp.DEFAULT_VERTEX_CAP
    constant_action: int | None = None

    def spec(self) -> model.ProblemSpec:
        if self.problem == "zero":
            acts = np.linspace(-self.action_bound, self.action_bound, self.action_count)
            return model.zero_problem(self.T, self.x0, tuple(acts), self.state_bound)
        return model.BUILTIN_PROBLEMS[self.problem](
            self.T, self.x0, self.action_bound, self.action_count, self.state_bound
        )

    def lattice_for(self, spec, dx) -> lattice.LatticeParams:
        return lattice.make_lattice(spec, dx, self.h_ratio * dx * dx, x_min=self.x_min,
                                    x_max=self.x_max, node_count=self.node_count)


_TYPES = {
    "problem": str, "T": float, "x0": float, "dx": list, "h_ratio": float,
    "node_count": int, "x_min": float, "x_max": float, "M": int,
    "action_bound": float, "action_count": int, "state_bound": float,
    "mc_paths": int, "seed": int, "ref_paths": int, "euler_steps": int,
    "ode_steps": int, "out": str, "self_convergence": bool,
    "max_vertices": int, "constant_action": int,
}


def _line_of(text, key):
    for no, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return no
    return None


def _flatten(d, prefix=""):
    # nested tables are accepted as namespaces: [grid] M = 8 is the same as M = 8
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, prefix))
        else:
            out[k] = v
    return out


def _coerce(key, value, text):
    want = _TYPES[key]
    where = f"key {key!r} (line {_line_of(text, key)})"
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if want is bool and isinstance(value, bool):
        return value
    if want is str and isinstance(value, str):
        return value
    if want is list:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [float(value)]
        if isinstance(value, list) and value and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            return [float(v) for v in value]
    raise ConfigError(f"{where}: expected {want.__name__}, got {value!r}")


def parse_config(path: str, seed: int | None = None) -> RunConfig:
    """Read a TOML run configuration and validate it.

    Unknown keys, wrong types and violated invariants raise
    :class:`ConfigError`; a time step above the Courant bound raises
    :class:`CourantViolationError`.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    text = raw.decode("utf-8")
    try:
        data = _flatten(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    kwargs = {}
    for key, value in data.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r} (line {_line_of(text, key)})")
        kwargs[key] = _coerce(key, value, text)
    if "x_min" in kwargs or "x_max" in kwargs:
        kwargs.setdefault("node_count", None)
    cfg = RunConfig(**kwargs)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={env_seed!r} is not an integer") from exc
    if seed is not None:
        cfg.seed = seed
    validate_config(cfg, text)
    return cfg


def validate_config(cfg: RunConfig, text: str = "") -> None:
    def bad(key, msg):
        line = _line_of(text, key) if text else None
        raise ConfigError(f"key {key!r}{f' (line {line})' if line else ''}: {msg}")

    if cfg.problem not in model.BUILTIN_PROBLEMS:
        bad("problem", f"unknown problem {cfg.problem!r}; choose from {sorted(model.BUILTIN_PROBLEMS)}")
    if not cfg.T > 0:
        bad("T", "must be positive")
    if not cfg.dx:
        bad("dx", "list is empty")
    if any(d <= 0 for d in cfg.dx):
        bad("dx", "entries must be positive")
    if any(b >= a for a, b in zip(cfg.dx, cfg.dx[1:])):
        bad("dx", "list must be strictly descending")
    if not cfg.h_ratio > 0:
        bad("h_ratio", "must be positive")
    if cfg.node_count is None and (cfg.x_min is None or cfg.x_max is None):
        bad("node_count", "give node_count or both x_min and x_max")
    if cfg.node_count is not None and cfg.node_count < 1:
        bad("node_count", "must be positive")
    if cfg.M < 1:
        bad("M", "must be at least 1")
    if cfg.action_count < 2 and cfg.problem != "zero":
        bad("action_count", "must be at least 2")
    for key in ("mc_paths", "ref_paths", "euler_steps"):
        if getattr(cfg, key) < 1:
            bad(key, "must be positive")
    if cfg.ode_steps < 100:
        bad("ode_steps", "must be at least 100")
    out_parent = os.path.dirname(os.path.abspath(cfg.out)) or "."
    if not os.access(out_parent, os.W_OK):
        bad("out", f"{out_parent!r} is not writable")
    spec = cfg.spec()
    if cfg.constant_action is not None and not 0 <= cfg.constant_action < len(spec.action_grid):
        bad("constant_action", "index outside the action grid")
    if cfg.h_ratio > spec.courant_constant * (1 + 1e-12):
        raise CourantViolationError(
            f"h_ratio={cfg.h_ratio} exceeds 1/(|b|^2+|sigma|^2)={spec.courant_constant:.6g}"
        )
    for d in cfg.dx:
        try:
            cfg.lattice_for(spec, d)
        except CourantViolationError:
            raise
        except PoctrlError as exc:
            raise ConfigError(f"dx={d}: {exc}") from exc


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# ------------------------------------------------------------------ check

def cmd_check(cfg: RunConfig, out_dir: str | None = None) -> int:
    spec = cfg.spec()
    out_dir = out_dir or cfg.out
    rep = model.validate_problem(spec, sample_count=512, rng_seed=cfg.seed)
    ok = rep.passed
    print(f"problem {spec.name}: max|b|={rep.max_b:.6g} max|sigma|={rep.max_sigma:.6g} "
          f"max|p|={rep.max_p:.6g} bounds {'ok' if rep.passed else 'EXCEEDED'}")
    rows = []
    for d in cfg.dx:
        params = cfg.lattice_for(spec, d)
        kern = lattice.TrinomialKernel(spec, params)
        K, A = params.node_count, kern.n_actions
        nodes = [(i, k, j) for i in range(params.n_steps) for k in range(1, K - 1) for j in range(A)]
        crep = lattice.check_local_consistency(spec, kern, nodes)
        law = lattice.ObservationLaw("rademacher", params.h)
        r = math.sqrt(params.h)
        obs_mean = 0.5 * r + 0.5 * (-r)
        obs_var = 0.5 * r * r + 0.5 * r * r
        obs_ok = obs_mean == 0.0 and abs(obs_var - law.variance) <= 1e-15
        print(f"dx={d:g} h={params.h:.6g} n={params.n_steps} nodes={K}: "
              f"{len(crep.rows)} interior checks, {len(crep.failures)} failures, "
              f"max E|H|^3/h^1.5={crep.max_third_ratio():.4g} (bound {crep.third_bound:.4g}); "
              f"observation mean={obs_mean} var-h={obs_var - law.variance:.3g}")
        for f in crep.failures[:10]:
            print(f"  FAIL i={f[0]} k={f[1]} j={f[2]} {f[3]}={f[4]!r}")
        ok = ok and crep.passed and obs_ok
        failed = {(f[0], f[1], f[2]) for f in crep.failures}
        for row in crep.rows:
            rows.append([d, params.h, row.i, row.k, row.j, row.mean_error, row.var_error,
                         row.third_ratio, *row.exp_ratios,
                         int((row.i, row.k, row.j) not in failed)])
    _write_csv(os.path.join(out_dir, "check.csv"),
               ["dx", "h", "i", "k", "j", "mean_error", "var_error", "third_ratio",
                "exp_ratio_c1", "exp_ratio_c2", "ok"], rows)
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ solve

def solve_one(cfg: RunConfig, spec, dx: float, threads: int = 1):
    params = cfg.lattice_for(spec, dx)
    kern = lattice.TrinomialKernel(spec, params)
    law = lattice.ObservationLaw("rademacher", params.h)
    grid = dpp.build_measure_grid(params.node_count, cfg.M, cap=cfg.max_vertices)
    table = dpp.backward_induction(spec, kern, law, grid, threads=threads)
    return params, kern, law, grid, table


def cmd_solve(cfg: RunConfig, threads: int = 1, out_dir: str | None = None) -> float:
    spec = cfg.spec()
    dx = cfg.dx[0]
    t0 = time.perf_counter()
    params, _, _, grid, table = solve_one(cfg, spec, dx, threads)
    value = spec.report(table.value)
    out_dir = os.path.join(out_dir or cfg.out, "solve")
    meta = {"problem": spec.name, "dx": dx, "h": params.h, "x_min": params.x_min,
            "x_max": params.x_max, "action_grid": list(spec.action_grid),
            "value_reported": value, "minimize": spec.minimize}
    dpp.write_tables(table, out_dir, meta)
    kind = "minimal cost" if spec.minimize else "value"
    print(f"dx={dx:g} h={params.h:.6g} n={params.n_steps} nodes={params.node_count} "
          f"M={cfg.M} vertices={len(grid)}")
    print(f"V_h ({kind}) = {value:.12g}   [{time.perf_counter() - t0:.2f}s]")
    print(f"tables written to {out_dir}")
    return value


# --------------------------------------------------------------- simulate

def cmd_simulate(cfg: RunConfig, policy_dir: str | None = None, constant_action: int | None = None,
                 threads: int = 1, dump_paths: bool = False, out_dir: str | None = None):
    spec = cfg.spec()
    out_dir = out_dir or cfg.out
    constant_action = cfg.constant_action if constant_action is None else constant_action
    if policy_dir is not None:
        table, info = dpp.read_tables(policy_dir)
        dx = float(info.get("dx", cfg.dx[0]))
        params = cfg.lattice_for(spec, dx)
        if info["n_steps"] != params.n_steps or info["K"] != params.node_count:
            raise ConfigError("policy tables do not match the configured lattice")
        policy = dpp.extract_policy(table, spec)
        source = f"policy tables {policy_dir}"
    elif constant_action is not None:
        params = cfg.lattice_for(spec, cfg.dx[0])
        policy = simulate.ConstantPolicy(constant_action)
        source = f"constant action index {constant_action} (a={spec.action_grid[constant_action]:g})"
    else:
        raise ConfigError("simulate needs --policy DIR or a constant action")
    kern = lattice.TrinomialKernel(spec, params)
    law = lattice.ObservationLaw("rademacher", params.h)
    res = simulate.simulate_discrete_paths(spec, kern, law, policy, cfg.mc_paths, cfg.seed,
                                           threads=threads, record=dump_paths)
    est = spec.report(res.estimate)
    print(f"policy: {source}")
    print(f"J_h estimate = {est:.10g}  std error = {res.std_error:.3g}  paths = {res.path_count}")
    if dump_paths:
        os.makedirs(out_dir, exist_ok=True)
        p = os.path.join(out_dir, "paths.csv")
        simulate.write_paths_csv(res.bundle, p)
        print(f"paths written to {p}")
    return est, res.std_error


# ----------------------------------------------------------------- lq-ref

def lq_reference(cfg: RunConfig, threads: int = 1) -> simulate.LQReference:
    if cfg.problem != "lq":
        raise ConfigError("the LQ reference is only defined for problem = \"lq\"")
    return simulate.lq_reference_value(cfg.T, cfg.x0, cfg.ref_paths, cfg.euler_steps,
                                       cfg.seed, ode_steps=cfg.ode_steps, threads=threads)


def cmd_lq_ref(cfg: RunConfig, threads: int = 1, out_dir: str | None = None):
    ref = lq_reference(cfg, threads)
    print(f"Pi(0) = {ref.Pi(0.0):.10g}  (closed form {1 / (1 + cfg.T):.10g})")
    print(f"P(T)  = {ref.P(cfg.T):.10g}  (closed form {math.tanh(cfg.T):.10g})")
    print(f"V_ref = {ref.value_estimate:.8g} +/- {ref.ci_halfwidth:.3g} "
          f"(3 sigma, {ref.path_count} paths, {ref.euler_steps} Euler steps)")
    _write_csv(os.path.join(out_dir or cfg.out, "lq_ref.csv"),
               ["T", "x0", "value", "ci_halfwidth", "std_error", "path_count", "euler_steps", "seed"],
               [[cfg.T, cfg.x0, ref.value_estimate, ref.ci_halfwidth, ref.std_error,
                 ref.path_count, ref.euler_steps, cfg.seed]])
    return ref


# --------------------------------------------------------------- converge

@dataclass
class ConvergenceRow:
    dx: float
    h: float
    vertex_count: int
    V_h: float
    V_ref: float
    ci_halfwidth: float
    abs_error: float
    log_h: float
    log_error: float
    wall_time: float

    CSV_FIELDS = ("dx", "h", "vertex_count", "V_h", "V_ref", "ci_halfwidth",
                  "abs_error", "log_h", "log_error")


def fit_slope(rows) -> float:
    x = np.array([r.log_h for r in rows])
    y = np.array([r.log_error for r in rows])
    return float(np.polyfit(x, y, 1)[0])


def run_convergence(cfg: RunConfig, threads: int = 1, reference: simulate.LQReference | None = None,
                    log=print):
    """Solve along the ``dx`` ladder and measure errors.

    Against the LQ Monte Carlo reference, or in self-convergence mode against
    the value at the finest ``dx`` (that rung is then not reported).
    Returns ``(rows, slope)``.
    """
    if len(cfg.dx) < 3:
        raise ConfigError("converge needs at least 3 dx values (slope is undefined otherwise)")
    spec = cfg.spec()
    solved = []
    for d in cfg.dx:
        t0 = time.perf_counter()
        params, _, _, grid, table = solve_one(cfg, spec, d, threads)
        solved.append((d, params, len(grid), spec.report(table.value), time.perf_counter() - t0))
        log(f"  dx={d:g} h={params.h:.6g} V_h={solved[-1][3]:.10g} [{solved[-1][4]:.1f}s]")
    if cfg.self_convergence:
        v_ref, ci = solved[-1][3], 0.0
        solved = solved[:-1]
    else:
        if reference is None:
            reference = lq_reference(cfg, threads)
        v_ref, ci = reference.value_estimate, reference.ci_halfwidth
    rows = []
    for d, params, vc, v, wall in solved:
        err = abs(v - v_ref)
        rows.append(ConvergenceRow(dx=d, h=params.h, vertex_count=vc, V_h=v, V_ref=v_ref,
                                   ci_halfwidth=ci, abs_error=err, log_h=math.log(params.h),
                                   log_error=math.log(err) if err > 0 else -math.inf,
                                   wall_time=wall))
    finite = [r for r in rows if math.isfinite(r.log_error)]
    slope = fit_slope(finite) if len(finite) >= 2 else math.nan
    return rows, slope


def cmd_converge(cfg: RunConfig, threads: int = 1, out_dir: str | None = None):
    mode = "self-convergence" if cfg.self_convergence else "LQ reference"
    print(f"convergence sweep ({mode}), dx = {cfg.dx}")
    rows, slope = run_convergence(cfg, threads)
    out_dir = out_dir or cfg.out
    path = os.path.join(out_dir, "convergence.csv")
    _write_csv(path, ConvergenceRow.CSV_FIELDS,
               [[getattr(r, f) for f in ConvergenceRow.CSV_FIELDS] for r in rows])
    _write_csv(os.path.join(out_dir, "convergence_fit.csv"), ["mode", "points", "slope"],
               [[mode, len(rows), slope]])
    for r in rows:
        print(f"dx={r.dx:<8g} h={r.h:<10.4g} V_h={r.V_h:<14.8g} V_ref={r.V_ref:<12.8g} "
              f"|err|={r.abs_error:.4g}  ({r.wall_time:.1f}s)")
    print(f"fitted slope of log|V_h - V_ref| vs log h: {slope:.4f}")
    print(f"written {path}")
    return rows, slope


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poctrl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=None, metavar="PATH")
    sub.add_parser("check", parents=[common], help="local-consistency and observation-moment checks")
    sub.add_parser("solve", parents=[common], help="backward DPP on the belief grid")
    sp = sub.add_parser("simulate", parents=[common], help="Monte Carlo evaluation of a policy")
    sp.add_argument("--policy", metavar="DIR", help="directory written by `solve`")
    sp.add_argument("--constant-action", type=int, metavar="INDEX")
    sp.add_argument("--dump-paths", action="store_true")
    sub.add_parser("lq-ref", parents=[common], help="Riccati/variance ODEs and LQ Monte Carlo value")
    sub.add_parser("converge", parents=[common], help="dx ladder with fitted log-log slope")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, seed=args.seed)
    except CourantViolationError as exc:
        print(f"courant violation: {exc}", file=sys.stderr)
        return EXIT_FAIL if args.command == "check" else EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=args.out)
    threads = max(1, args.threads)
    try:
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "solve":
            cmd_solve(cfg, threads)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.policy, args.constant_action, threads, args.dump_paths)
        elif args.command == "lq-ref":
            cmd_lq_ref(cfg, threads)
        elif args.command == "converge":
            cmd_converge(cfg, threads)
    except (ConfigError, InstanceTooLargeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CourantViolationError as exc:
        print(f"courant violation: {exc}", file=sys.stderr)
        return EXIT_FAIL if args.command == "check" else EXIT_USAGE
    except PoctrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
