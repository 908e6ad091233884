"""Markov-chain approximation of partially observed stochastic control.

Trinomial signal lattice, discrete nonlinear filter over beliefs, and
backward dynamic programming on a discretized belief simplex, with a
linear-quadratic benchmark.
"""
from .dpp import (
    MeasureGrid,
    PolicyTable,
    ValueTable,
    backward_induction,
    brute_force_value,
    build_measure_grid,
    exact_tree_value,
    extract_policy,
    project_measure,
)
from .errors import (
    ConfigError,
    CourantViolationError,
    DegenerateProblemError,
    InstanceTooLargeError,
    InvalidProblemError,
    StepSizeError,
)
from .filter import DiscreteMeasure, LambdaState, brute_force_filter, filter_update, integrate, lambda_update
from .kernels import available_backends, backend_name, set_backend
from .lattice import (
    LatticeParams,
    ObservationLaw,
    TrinomialKernel,
    check_local_consistency,
    courant_step,
    make_lattice,
    sample_obs_increment,
    sample_signal_increment,
    trinomial_probs,
)
from .model import BoundConstants, ProblemSpec, lq_problem, validate_problem
from .simulate import (
    ConstantPolicy,
    SmoothFunction,
    lq_reference_value,
    martingale_residual,
    simulate_discrete_paths,
    solve_riccati,
    solve_variance,
)

__version__ = "0.1.0"
