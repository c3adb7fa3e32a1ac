"""Greedy interval partitions, level-2 rough paths, Gaussian drivers,
equation solvers and tail-index fitting on time grids."""

from .controls import (
    Control,
    GreedyPartition,
    SuperadditivityError,
    accumulated_alpha_variation,
    build_table_control,
    greedy_partition,
    n_alpha,
)
from .gaussian import (
    GaussianModel,
    RhoVarEstimate,
    brownian,
    covariance,
    default_grid,
    fbm,
    rho_variation_2d,
    sample_path,
    sample_paths,
    she,
    she_kernel_closed_reference,
    she_kernel_series,
)
from .rde import (
    LinearField,
    OneForm,
    RdeDivergenceError,
    RdeSolution,
    VectorFieldFamily,
    jacobian_flow,
    rough_integral,
    solve_linear_rde,
    solve_rde,
)
from .roughpath import (
    GroupElement,
    Level2RoughPath,
    chen_combine,
    control_from_rough_path,
    dilate,
    first_level_p_variation,
    homogeneous_norm,
    identity_element,
    lift_piecewise_linear,
    p_variation,
)
from .tails import (
    TailFit,
    TrialConfig,
    TrialSample,
    fit_weibull_shape,
    run_trials,
    survival_table,
)

__version__ = "0.1.0"
